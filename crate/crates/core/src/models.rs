//! Odometry motion model and beam sensor model.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{normalize_angle, OccupancyGrid, Pose};

/// Relative displacement in rotate-translate-rotate form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdometryControl {
    pub delta_rot1: f64,
    pub delta_trans: f64,
    pub delta_rot2: f64,
}

impl OdometryControl {
    pub fn new(delta_rot1: f64, delta_trans: f64, delta_rot2: f64) -> Self {
        Self {
            delta_rot1: normalize_angle(delta_rot1),
            delta_trans,
            delta_rot2: normalize_angle(delta_rot2),
        }
    }

    pub fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    /// Decomposes the displacement `from → to`.
    pub fn between(from: &Pose, to: &Pose) -> Self {
        let dx = to.x - from.x;
        let dy = to.y - from.y;
        let trans = dx.hypot(dy);
        let rot1 = if trans > 1e-12 {
            normalize_angle(dy.atan2(dx) - from.theta)
        } else {
            0.0
        };
        let rot2 = normalize_angle(to.theta - from.theta - rot1);
        Self::new(rot1, trans, rot2)
    }

    /// Noise-free composition with a pose.
    pub fn apply(&self, pose: &Pose) -> Pose {
        compose(pose, self.delta_rot1, self.delta_trans, self.delta_rot2)
    }

    pub fn is_zero(&self) -> bool {
        self.delta_rot1 == 0.0 && self.delta_trans == 0.0 && self.delta_rot2 == 0.0
    }
}

fn compose(pose: &Pose, rot1: f64, trans: f64, rot2: f64) -> Pose {
    let heading = pose.theta + rot1;
    Pose::new(
        pose.x + trans * heading.cos(),
        pose.y + trans * heading.sin(),
        heading + rot2,
    )
}

/// Evenly spaced bearings over `[-fov/2, fov/2]`.
pub fn evenly_spaced_bearings(count: usize, fov: f64) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.0],
        n => (0..n).map(|i| -0.5 * fov + fov * i as f64 / (n - 1) as f64).collect(),
    }
}

/// One range scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanObservation {
    pub bearings: Vec<f64>,
    pub ranges: Vec<f64>,
    pub max_range: f64,
}

impl ScanObservation {
    /// Validates lengths and clamps ranges into `[0, max_range]`.
    pub fn new(bearings: Vec<f64>, ranges: Vec<f64>, max_range: f64) -> Result<Self> {
        if bearings.len() != ranges.len() {
            return Err(Error::ScanLengthMismatch {
                bearings: bearings.len(),
                ranges: ranges.len(),
            });
        }
        if !(max_range > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "max_range must be positive, got {max_range}"
            )));
        }
        let ranges = ranges.into_iter().map(|r| r.clamp(0.0, max_range)).collect();
        Ok(Self {
            bearings,
            ranges,
            max_range,
        })
    }

    /// Noise-free scan at `pose`; a pose inside a wall reads all zeros.
    pub fn simulate(map: &OccupancyGrid, pose: &Pose, bearings: &[f64], max_range: f64) -> Self {
        let ranges = if map.occupied_at(pose.x, pose.y) {
            vec![0.0; bearings.len()]
        } else {
            bearings
                .iter()
                .map(|b| map.cast_from_free(pose.x, pose.y, pose.theta + b, max_range))
                .collect()
        };
        Self {
            bearings: bearings.to_vec(),
            ranges,
            max_range,
        }
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }
}

/// Default bearing fan: `count` beams over the front half-plane.
pub fn default_bearings(count: usize) -> Vec<f64> {
    evenly_spaced_bearings(count, 2.0 * FRAC_PI_2)
}

/// Motion and sensor noise parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    /// Translation std per metre travelled.
    pub alpha_trans: f64,
    /// Rotation std per radian turned.
    pub alpha_rot: f64,
    /// Cross term: rotation std per metre and translation std per radian.
    pub alpha_trans_rot: f64,
    /// Beam-hit Gaussian std, metres.
    pub sigma_hit: f64,
    pub z_hit: f64,
    pub z_rand: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            alpha_trans: 0.05,
            alpha_rot: 0.05,
            alpha_trans_rot: 0.01,
            sigma_hit: 0.1,
            z_hit: 0.9,
            z_rand: 0.1,
        }
    }
}

impl NoiseParams {
    pub fn noiseless_motion(mut self) -> Self {
        self.alpha_trans = 0.0;
        self.alpha_rot = 0.0;
        self.alpha_trans_rot = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("alpha_trans", self.alpha_trans),
            ("alpha_rot", self.alpha_rot),
            ("alpha_trans_rot", self.alpha_trans_rot),
            ("z_hit", self.z_hit),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be >= 0, got {v}")));
            }
        }
        if !(self.sigma_hit > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "sigma_hit must be positive, got {}",
                self.sigma_hit
            )));
        }
        // z_rand is the floor that keeps every weight strictly positive.
        if !(self.z_rand > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "z_rand must be positive, got {}",
                self.z_rand
            )));
        }
        if (self.z_hit + self.z_rand - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "z_hit + z_rand must equal 1, got {}",
                self.z_hit + self.z_rand
            )));
        }
        Ok(())
    }
}

/// Draws `x_t ~ p(x_t | x_{t-1}, u)`.
pub fn sample_motion<R: Rng + ?Sized>(prev: &Pose, u: &OdometryControl, noise: &NoiseParams, rng: &mut R) -> Pose {
    let rot1 = u.delta_rot1.abs();
    let trans = u.delta_trans.abs();
    let rot2 = u.delta_rot2.abs();
    let sd_rot1 = noise.alpha_rot * rot1 + noise.alpha_trans_rot * trans;
    let sd_trans = noise.alpha_trans * trans + noise.alpha_trans_rot * (rot1 + rot2);
    let sd_rot2 = noise.alpha_rot * rot2 + noise.alpha_trans_rot * trans;
    let mut gauss = |sd: f64| -> f64 {
        if sd > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            sd * z
        } else {
            0.0
        }
    };
    let r1 = u.delta_rot1 + gauss(sd_rot1);
    let t = u.delta_trans + gauss(sd_trans);
    let r2 = u.delta_rot2 + gauss(sd_rot2);
    compose(prev, r1, t, r2)
}

/// Precomputed constants of the beam model for one noise setting and range.
#[derive(Debug, Clone, Copy)]
struct BeamModel {
    inv_two_var: f64,
    hit_peak: f64,
    floor: f64,
    peak: f64,
}

impl BeamModel {
    fn new(noise: &NoiseParams, max_range: f64) -> Self {
        let sigma = noise.sigma_hit;
        let hit_peak = noise.z_hit / (sigma * (2.0 * PI).sqrt());
        let floor = noise.z_rand / max_range;
        Self {
            inv_two_var: 1.0 / (2.0 * sigma * sigma),
            hit_peak,
            floor,
            peak: hit_peak + floor,
        }
    }

    #[inline]
    fn log_ratio(&self, err: f64) -> f64 {
        ((self.hit_peak * (-err * err * self.inv_two_var).exp() + self.floor) / self.peak).ln()
    }
}

/// Lowest value [`likelihood`] can return for this noise and range.
pub fn likelihood_floor(noise: &NoiseParams, max_range: f64) -> f64 {
    let m = BeamModel::new(noise, max_range);
    m.floor / m.peak
}

/// Beam likelihood `p(y | x)` rescaled into `(0, 1]`.
///
/// Per-beam values are a hit Gaussian plus a uniform floor; the result is
/// their geometric mean divided by the per-beam maximum, so a scan that
/// matches exactly scores 1 regardless of the beam count.
pub fn likelihood(y: &ScanObservation, x: &Pose, map: &OccupancyGrid, noise: &NoiseParams) -> Result<f64> {
    if y.bearings.len() != y.ranges.len() {
        return Err(Error::ScanLengthMismatch {
            bearings: y.bearings.len(),
            ranges: y.ranges.len(),
        });
    }
    Ok(likelihood_unchecked(y, x, map, noise))
}

pub(crate) fn likelihood_unchecked(y: &ScanObservation, x: &Pose, map: &OccupancyGrid, noise: &NoiseParams) -> f64 {
    let model = BeamModel::new(noise, y.max_range);
    if y.ranges.is_empty() {
        return 1.0;
    }
    if map.occupied_at(x.x, x.y) {
        return model.floor / model.peak;
    }
    let mut acc = 0.0;
    for (bearing, range) in y.bearings.iter().zip(&y.ranges) {
        let expected = map.cast_from_free(x.x, x.y, x.theta + bearing, y.max_range);
        acc += model.log_ratio(range - expected);
    }
    (acc / y.ranges.len() as f64).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::world::build_symmetric_map;

    #[test]
    fn noiseless_motion_is_exact() {
        let noise = NoiseParams::default().noiseless_motion();
        let mut rng = seeded(1);
        let p = sample_motion(&Pose::default(), &OdometryControl::new(0.0, 1.0, 0.0), &noise, &mut rng);
        assert_eq!(p, Pose::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn zero_control_is_identity_under_noise() {
        let noise = NoiseParams {
            alpha_trans: 0.5,
            alpha_rot: 0.5,
            alpha_trans_rot: 0.5,
            ..NoiseParams::default()
        };
        let mut rng = seeded(2);
        let start = Pose::new(1.0, 2.0, 0.3);
        for _ in 0..100 {
            assert_eq!(sample_motion(&start, &OdometryControl::zero(), &noise, &mut rng), start);
        }
    }

    #[test]
    fn translation_noise_std_matches_alpha() {
        let noise = NoiseParams {
            alpha_trans: 0.1,
            alpha_rot: 0.0,
            alpha_trans_rot: 0.0,
            ..NoiseParams::default()
        };
        let mut rng = seeded(3);
        let u = OdometryControl::new(0.0, 1.0, 0.0);
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| sample_motion(&Pose::default(), &u, &noise, &mut rng).x)
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var.sqrt() - 0.1).abs() < 0.01, "std {}", var.sqrt());
        assert!((mean - 1.0).abs() < 0.002);
    }

    #[test]
    fn between_and_apply_invert() {
        let a = Pose::new(1.0, -2.0, 2.9);
        let b = Pose::new(-0.5, 0.7, -2.8);
        let u = OdometryControl::between(&a, &b);
        let c = u.apply(&a);
        assert!(c.distance_xy(&b) < 1e-12);
        assert!(normalize_angle(c.theta - b.theta).abs() < 1e-12);
    }

    #[test]
    fn perfect_scan_scores_one() {
        let map = build_symmetric_map(15.0, 2, 1.0, 0.1).unwrap();
        let noise = NoiseParams::default();
        let pose = Pose::new(3.7, 4.1, 0.4);
        let y = ScanObservation::simulate(&map, &pose, &default_bearings(32), 10.0);
        assert_eq!(likelihood(&y, &pose, &map, &noise).unwrap(), 1.0);
    }

    #[test]
    fn pose_in_wall_gets_floor() {
        let map = build_symmetric_map(15.0, 2, 1.0, 0.1).unwrap();
        let noise = NoiseParams::default();
        let truth = Pose::new(3.7, 4.1, 0.4);
        let y = ScanObservation::simulate(&map, &truth, &default_bearings(16), 10.0);
        let w = likelihood(&y, &Pose::new(7.5, 2.0, 0.0), &map, &noise).unwrap();
        let floor = likelihood_floor(&noise, 10.0);
        assert_eq!(w, floor);
        assert!((floor - 0.01 / (0.9 / (0.1 * (2.0 * PI).sqrt()) + 0.01)).abs() < 1e-15);
    }

    #[test]
    fn mismatched_scan_is_an_error() {
        let map = build_symmetric_map(10.0, 1, 1.0, 0.1).unwrap();
        let y = ScanObservation {
            bearings: vec![0.0, 1.0],
            ranges: vec![1.0],
            max_range: 5.0,
        };
        assert!(matches!(
            likelihood(&y, &Pose::new(5.0, 5.0, 0.0), &map, &NoiseParams::default()),
            Err(Error::ScanLengthMismatch { .. })
        ));
        assert!(ScanObservation::new(vec![0.0], vec![], 1.0).is_err());
    }

    #[test]
    fn offset_pose_scores_lower() {
        let map = build_symmetric_map(15.0, 2, 1.0, 0.1).unwrap();
        let noise = NoiseParams {
            sigma_hit: 0.2,
            ..NoiseParams::default()
        };
        let truth = Pose::new(3.75, 3.75, 0.3);
        let y = ScanObservation::simulate(&map, &truth, &default_bearings(32), 10.0);
        let at_truth = likelihood(&y, &truth, &map, &noise).unwrap();
        for k in 0..8 {
            let a = k as f64 * PI / 4.0;
            let off = Pose::new(truth.x + 0.5 * a.cos(), truth.y + 0.5 * a.sin(), truth.theta);
            assert!(likelihood(&y, &off, &map, &noise).unwrap() < at_truth);
        }
    }

    #[test]
    fn noise_validation() {
        assert!(NoiseParams::default().validate().is_ok());
        let bad = NoiseParams {
            z_hit: 0.5,
            ..NoiseParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = NoiseParams {
            sigma_hit: 0.0,
            ..NoiseParams::default()
        };
        assert!(bad.validate().is_err());
    }
}
