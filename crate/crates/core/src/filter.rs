//! Weighted sample sets: normalization, systematic resampling, the
//! importance step shared by every filter, and pose summaries.

use std::ops::{Deref, DerefMut};

use nalgebra::Matrix3;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{likelihood_unchecked, sample_motion, NoiseParams, OdometryControl, ScanObservation};
use crate::rng::StreamSplitter;
use crate::world::{normalize_angle, OccupancyGrid, Pose};

// Below this many samples the per-sample work stays on the calling thread.
pub(crate) const PAR_MIN_LEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedSample {
    pub pose: Pose,
    pub weight: f64,
}

impl WeightedSample {
    pub fn new(pose: Pose, weight: f64) -> Self {
        Self { pose, weight }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub samples: Vec<WeightedSample>,
}

impl Deref for SampleSet {
    type Target = Vec<WeightedSample>;
    fn deref(&self) -> &Self::Target {
        &self.samples
    }
}

impl DerefMut for SampleSet {
    fn deref_mut(&mut self) -> &mut Self::Target {
        &mut self.samples
    }
}

impl FromIterator<WeightedSample> for SampleSet {
    fn from_iter<I: IntoIterator<Item = WeightedSample>>(iter: I) -> Self {
        Self {
            samples: iter.into_iter().collect(),
        }
    }
}

impl From<Vec<WeightedSample>> for SampleSet {
    fn from(samples: Vec<WeightedSample>) -> Self {
        Self { samples }
    }
}

impl SampleSet {
    pub fn new(samples: Vec<WeightedSample>) -> Self {
        Self { samples }
    }

    pub fn total_weight(&self) -> f64 {
        self.samples.iter().map(|s| s.weight).sum()
    }

    pub fn mean_weight(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            self.total_weight() / self.samples.len() as f64
        }
    }

    pub fn max_weight(&self) -> f64 {
        self.samples.iter().map(|s| s.weight).fold(0.0, f64::max)
    }

    /// Divides every weight by the total.
    pub fn normalize(&mut self) -> Result<()> {
        let total = self.total_weight();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::ZeroWeights);
        }
        for s in &mut self.samples {
            s.weight /= total;
        }
        Ok(())
    }

    pub fn normalized(mut self) -> Result<Self> {
        self.normalize()?;
        Ok(self)
    }

    /// Systematic (low-variance) resampling to `n_out` equally weighted
    /// samples. Weights need not be normalized; they are used relative to
    /// their sum.
    pub fn resample<R: Rng + ?Sized>(&self, n_out: usize, rng: &mut R) -> Result<SampleSet> {
        if n_out == 0 {
            return Err(Error::EmptyRequest);
        }
        let total = self.total_weight();
        if self.samples.is_empty() || !(total > 0.0) {
            return Err(Error::ZeroWeights);
        }
        let offset: f64 = rng.random();
        Ok(systematic_indices(&self.samples, total, n_out, offset)
            .into_iter()
            .map(|i| WeightedSample::new(self.samples[i].pose, 1.0 / n_out as f64))
            .collect())
    }

    /// Mean pose (circular mean for heading) and weighted covariance.
    pub fn summarize(&self) -> (Pose, Matrix3<f64>) {
        let total = self.total_weight();
        if self.samples.is_empty() || !(total > 0.0) {
            return (Pose::default(), Matrix3::zeros());
        }
        let (mut mx, mut my, mut mc, mut ms) = (0.0, 0.0, 0.0, 0.0);
        for s in &self.samples {
            let w = s.weight / total;
            mx += w * s.pose.x;
            my += w * s.pose.y;
            mc += w * s.pose.theta.cos();
            ms += w * s.pose.theta.sin();
        }
        let mean_theta = if mc == 0.0 && ms == 0.0 { 0.0 } else { ms.atan2(mc) };
        let mean = Pose::new(mx, my, mean_theta);
        let mut cov = Matrix3::zeros();
        for s in &self.samples {
            let w = s.weight / total;
            let d = [
                s.pose.x - mean.x,
                s.pose.y - mean.y,
                normalize_angle(s.pose.theta - mean.theta),
            ];
            for i in 0..3 {
                for j in i..3 {
                    cov[(i, j)] += w * d[i] * d[j];
                }
            }
        }
        for i in 0..3 {
            for j in 0..i {
                cov[(i, j)] = cov[(j, i)];
            }
        }
        (mean, cov)
    }
}

/// Indices picked by a systematic comb with the given offset in `[0, 1)`.
pub(crate) fn systematic_indices(samples: &[WeightedSample], total: f64, n_out: usize, offset: f64) -> Vec<usize> {
    let step = total / n_out as f64;
    let mut out = Vec::with_capacity(n_out);
    let mut cumulative = samples[0].weight;
    let mut i = 0;
    for k in 0..n_out {
        let target = (offset + k as f64) * step;
        while cumulative <= target && i + 1 < samples.len() {
            i += 1;
            cumulative += samples[i].weight;
        }
        out.push(i);
    }
    out
}

/// Moves every sample through the motion model and replaces its weight with
/// the raw likelihood of `y`. Sample `j` draws from stream `j` of a splitter
/// seeded by one draw from `rng`.
pub fn importance_step<R: Rng + ?Sized>(
    set: &SampleSet,
    u: &OdometryControl,
    y: &ScanObservation,
    map: &OccupancyGrid,
    noise: &NoiseParams,
    rng: &mut R,
) -> Result<SampleSet> {
    if y.bearings.len() != y.ranges.len() {
        return Err(Error::ScanLengthMismatch {
            bearings: y.bearings.len(),
            ranges: y.ranges.len(),
        });
    }
    let streams = StreamSplitter::from_rng(rng);
    let samples = set
        .samples
        .par_iter()
        .with_min_len(PAR_MIN_LEN)
        .enumerate()
        .map(|(j, s)| {
            let mut local = streams.stream(j);
            let pose = sample_motion(&s.pose, u, noise, &mut local);
            WeightedSample::new(pose, likelihood_unchecked(y, &pose, map, noise))
        })
        .collect();
    Ok(SampleSet { samples })
}
