//! Species: clusters of samples that each carry one pose hypothesis.
//!
//! Initial species come from a large uniform test set. The (x, y) plane is
//! cut into equal grids, grids whose average weight clears a threshold form
//! the seed set `V`, the connected regions of `V` seed a city-block
//! influence-zone partition of the whole grid, and each zone contributes its
//! best test samples to one species.

use std::collections::VecDeque;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coevolution::{living_domain, LivingDomain, VARIANCE_FLOOR};
use crate::error::{Error, Result};
use crate::filter::{SampleSet, WeightedSample, PAR_MIN_LEN};
use crate::models::{likelihood_unchecked, NoiseParams, ScanObservation};
use crate::world::{OccupancyGrid, Pose};

/// Equal-size grid over the (x, y) state subspace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub x0: f64,
    pub y0: f64,
    pub cell_w: f64,
    pub cell_h: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, x0: f64, y0: f64, cell_w: f64, cell_h: f64) -> Result<Self> {
        if nx == 0 || ny == 0 || !(cell_w > 0.0) || !(cell_h > 0.0) {
            return Err(Error::InvalidDimension(format!(
                "clustering grid {nx}x{ny} with cells {cell_w}x{cell_h} is invalid"
            )));
        }
        Ok(Self {
            nx,
            ny,
            x0,
            y0,
            cell_w,
            cell_h,
        })
    }

    /// `nx × ny` grids covering the map extent.
    pub fn covering(map: &OccupancyGrid, nx: usize, ny: usize) -> Result<Self> {
        let (ox, oy) = map.origin();
        Self::new(
            nx,
            ny,
            ox,
            oy,
            map.width_m() / nx.max(1) as f64,
            map.height_m() / ny.max(1) as f64,
        )
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, x: f64, y: f64) -> Option<usize> {
        let gx = ((x - self.x0) / self.cell_w).floor();
        let gy = ((y - self.y0) / self.cell_h).floor();
        if gx < 0.0 || gy < 0.0 || gx >= self.nx as f64 || gy >= self.ny as f64 {
            return None;
        }
        Some(gy as usize * self.nx + gx as usize)
    }

    /// Like [`GridSpec::index`] but clamps points outside onto the border.
    pub fn index_clamped(&self, x: f64, y: f64) -> usize {
        let gx = ((x - self.x0) / self.cell_w).floor().clamp(0.0, self.nx as f64 - 1.0);
        let gy = ((y - self.y0) / self.cell_h).floor().clamp(0.0, self.ny as f64 - 1.0);
        gy as usize * self.nx + gx as usize
    }

    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index % self.nx, index / self.nx)
    }

    /// 4-connected neighbours.
    pub fn neighbours(&self, index: usize) -> impl Iterator<Item = usize> + '_ {
        let (ix, iy) = self.coords(index);
        let nx = self.nx;
        [
            (ix > 0).then(|| index - 1),
            (ix + 1 < nx).then(|| index + 1),
            (iy > 0).then(|| index - nx),
            (iy + 1 < self.ny).then(|| index + nx),
        ]
        .into_iter()
        .flatten()
    }
}

/// Per-grid weights, the above-threshold set and zone labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPartition {
    pub grid: GridSpec,
    /// Average test-sample weight per grid; 0 for empty grids.
    pub weights: Vec<f64>,
    pub counts: Vec<usize>,
    pub in_v: Vec<bool>,
    pub threshold: f64,
    /// Zone label per grid; 0 means unassigned, zones are `1..=zones`.
    pub labels: Vec<u32>,
    pub zones: usize,
}

impl GridPartition {
    pub fn v_count(&self) -> usize {
        self.in_v.iter().filter(|&&v| v).count()
    }

    /// Mean weight of the grids in `V`.
    pub fn v_mean_weight(&self) -> f64 {
        let (sum, n) = self
            .weights
            .iter()
            .zip(&self.in_v)
            .filter(|(_, &v)| v)
            .fold((0.0, 0usize), |(s, n), (w, _)| (s + w, n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// Mean weight of the `V` grids inside zone `label`.
    pub fn zone_seed_weight(&self, label: u32) -> f64 {
        let (sum, n) = (0..self.weights.len())
            .filter(|&i| self.in_v[i] && self.labels[i] == label)
            .fold((0.0, 0usize), |(s, n), i| (s + self.weights[i], n + 1));
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

/// One hypothesis: a cluster of samples plus its population state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Species {
    pub id: u32,
    pub samples: SampleSet,
    /// Real-valued population; rounded only when samples are materialized.
    pub population: f64,
    /// `dN/dt` from the last dynamics evaluation.
    pub growth_rate: f64,
    /// Average raw importance factor.
    pub fitness: f64,
    pub living_domain: Option<LivingDomain>,
    pub capacity: f64,
}

impl Species {
    pub fn new(id: u32, samples: SampleSet, population: f64) -> Self {
        let fitness = samples.mean_weight();
        let living_domain = living_domain(&samples).ok();
        Self {
            id,
            samples,
            population,
            growth_rate: 0.0,
            fitness,
            living_domain,
            capacity: 0.0,
        }
    }

    pub fn mean_pose(&self) -> Pose {
        self.samples.summarize().0
    }

    /// Weighted mean, with a point-like domain for species too small for a
    /// covariance.
    pub fn domain_or_point(&self) -> LivingDomain {
        if let Ok(d) = living_domain(&self.samples) {
            return d;
        }
        let center = self.samples.first().map(|s| s.pose).unwrap_or_default();
        let r = 2.0 * VARIANCE_FLOOR.sqrt();
        LivingDomain {
            center,
            axes: [[1.0, 0.0], [0.0, 1.0]],
            variances: [VARIANCE_FLOOR; 2],
            radii: [r, r],
            size: crate::coevolution::ellipse_size(&[VARIANCE_FLOOR; 2]),
        }
    }
}

/// `n_test` uniform samples over free space × `[-π, π)`, weighted by their
/// likelihood against `y0`.
pub fn draw_test_set<R: Rng + ?Sized>(
    map: &OccupancyGrid,
    y0: &ScanObservation,
    n_test: usize,
    noise: &NoiseParams,
    rng: &mut R,
) -> Result<SampleSet> {
    if n_test == 0 {
        return Err(Error::EmptyRequest);
    }
    if y0.bearings.len() != y0.ranges.len() {
        return Err(Error::ScanLengthMismatch {
            bearings: y0.bearings.len(),
            ranges: y0.ranges.len(),
        });
    }
    let poses: Vec<Pose> = (0..n_test).map(|_| map.sample_free_pose(rng)).collect();
    let samples = poses
        .into_par_iter()
        .with_min_len(PAR_MIN_LEN)
        .map(|p| WeightedSample::new(p, likelihood_unchecked(y0, &p, map, noise)))
        .collect();
    Ok(SampleSet { samples })
}

/// Grid weights and the set `V` of grids above `T = μ · max grid weight`.
pub fn threshold_grids(test: &SampleSet, grid: &GridSpec, mu: f64) -> Result<GridPartition> {
    if !(mu > 0.0 && mu < 1.0) {
        return Err(Error::InvalidParameter(format!("mu must be in (0, 1), got {mu}")));
    }
    let mut sums = vec![0.0; grid.len()];
    let mut counts = vec![0usize; grid.len()];
    for s in test.iter() {
        if let Some(i) = grid.index(s.pose.x, s.pose.y) {
            sums[i] += s.weight;
            counts[i] += 1;
        }
    }
    let weights: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    let max = weights.iter().copied().fold(0.0, f64::max);
    let threshold = mu * max;
    let in_v = weights
        .iter()
        .zip(&counts)
        .map(|(&w, &c)| c > 0 && w > threshold)
        .collect();
    Ok(GridPartition {
        grid: *grid,
        weights,
        counts,
        in_v,
        threshold,
        labels: vec![0; grid.len()],
        zones: 0,
    })
}

/// `N₀ = ⌈η |V| / w̄₀⌉`.
pub fn initial_sample_size(partition: &GridPartition, eta: f64) -> Result<usize> {
    let v = partition.v_count();
    if v == 0 {
        return Err(Error::EmptyThresholdSet);
    }
    if !(eta > 0.0) {
        return Err(Error::InvalidParameter(format!("eta must be positive, got {eta}")));
    }
    let raw = eta * v as f64 / partition.v_mean_weight();
    // absorb rounding noise so exact quotients are not bumped up by one
    Ok(((raw - 1e-9).ceil() as usize).max(1))
}

/// Labels 4-connected regions of `cells` in row-major discovery order.
/// Returns per-cell labels (0 = not in `cells`) and the region count.
pub fn connected_regions(grid: &GridSpec, cells: &[bool]) -> (Vec<u32>, usize) {
    let mut labels = vec![0u32; grid.len()];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..grid.len() {
        if !cells[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        queue.push_back(start);
        while let Some(c) = queue.pop_front() {
            for n in grid.neighbours(c) {
                if cells[n] && labels[n] == 0 {
                    labels[n] = next;
                    queue.push_back(n);
                }
            }
        }
    }
    (labels, next as usize)
}

/// Skeleton-by-influence-zone partition of the whole grid. Connected regions
/// of `V` are the seeds; every grid joins the seed at the smallest
/// city-block distance, ties going to the lowest seed id.
pub fn skiz_partition(partition: &GridPartition) -> Result<GridPartition> {
    if partition.v_count() == 0 {
        return Err(Error::EmptyThresholdSet);
    }
    let grid = &partition.grid;
    let (mut labels, zones) = connected_regions(grid, &partition.in_v);
    let mut dist = vec![usize::MAX; grid.len()];
    let mut frontier: Vec<usize> = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        if l != 0 {
            dist[i] = 0;
            frontier.push(i);
        }
    }
    let mut d = 0;
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for &c in &frontier {
            for n in grid.neighbours(c) {
                if dist[n] == usize::MAX {
                    dist[n] = d + 1;
                    labels[n] = labels[c];
                    next.push(n);
                } else if dist[n] == d + 1 && labels[c] < labels[n] {
                    labels[n] = labels[c];
                }
            }
        }
        frontier = next;
        d += 1;
    }
    let mut out = partition.clone();
    out.labels = labels;
    out.zones = zones;
    Ok(out)
}

/// Largest-remainder rounding of proportional quotas; sums to `total`.
pub fn largest_remainder(shares: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = shares.iter().sum();
    if shares.is_empty() || !(sum > 0.0) {
        return vec![0; shares.len()];
    }
    let exact: Vec<f64> = shares.iter().map(|s| total as f64 * s / sum).collect();
    let mut quotas: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = quotas.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        quotas[i] += 1;
    }
    quotas
}

/// Splits `n0` across zones in proportion to their seed weight and fills
/// each species with the best test samples of its zone.
pub fn allocate_and_select(partition: &GridPartition, test: &SampleSet, n0: usize) -> Result<Vec<Species>> {
    if partition.zones == 0 {
        return Err(Error::EmptyThresholdSet);
    }
    let grid = &partition.grid;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); partition.zones];
    for (j, s) in test.iter().enumerate() {
        if let Some(i) = grid.index(s.pose.x, s.pose.y) {
            let label = partition.labels[i];
            if label > 0 {
                members[label as usize - 1].push(j);
            }
        }
    }
    let shares: Vec<f64> = (1..=partition.zones as u32)
        .map(|label| {
            if members[label as usize - 1].is_empty() {
                0.0
            } else {
                partition.zone_seed_weight(label)
            }
        })
        .collect();
    let quotas = largest_remainder(&shares, n0);
    let mut species = Vec::new();
    for (zone, (mut idx, quota)) in members.into_iter().zip(quotas).enumerate() {
        if quota == 0 || idx.is_empty() {
            continue;
        }
        idx.sort_by(|&a, &b| test[b].weight.total_cmp(&test[a].weight).then(a.cmp(&b)));
        let take = quota.min(idx.len());
        let samples: SampleSet = idx[..take].iter().map(|&j| test[j]).collect();
        species.push(Species::new(zone as u32 + 1, samples, take as f64));
    }
    Ok(species)
}

/// Splits species whose samples occupy more than one connected group of
/// grids, then merges pairs whose living domains overlap with no weight
/// valley between their means. Groups with fewer than `min_part` samples
/// stay with the largest group. Fresh ids come from `next_id`.
pub fn split_merge(species: Vec<Species>, grid: &GridSpec, min_part: usize, next_id: &mut u32) -> Vec<Species> {
    let mut out = Vec::with_capacity(species.len());
    for sp in species {
        split_into(sp, grid, min_part, next_id, &mut out);
    }
    merge_all(out)
}

fn split_into(sp: Species, grid: &GridSpec, min_part: usize, next_id: &mut u32, out: &mut Vec<Species>) {
    if sp.samples.len() < 2 {
        out.push(sp);
        return;
    }
    let cell_of: Vec<usize> = sp
        .samples
        .iter()
        .map(|s| grid.index_clamped(s.pose.x, s.pose.y))
        .collect();
    let mut occupied = vec![false; grid.len()];
    for &c in &cell_of {
        occupied[c] = true;
    }
    let (labels, parts) = connected_regions(grid, &occupied);
    if parts <= 1 {
        out.push(sp);
        return;
    }
    let mut groups: Vec<Vec<WeightedSample>> = vec![Vec::new(); parts];
    for (s, &c) in sp.samples.iter().zip(&cell_of) {
        groups[labels[c] as usize - 1].push(*s);
    }
    let largest = (0..parts)
        .max_by_key(|&g| (groups[g].len(), std::cmp::Reverse(g)))
        .unwrap_or(0);
    let mut strays = Vec::new();
    let mut kept: Vec<Vec<WeightedSample>> = Vec::new();
    let mut home = 0;
    for (g, group) in groups.into_iter().enumerate() {
        if g == largest {
            home = kept.len();
            kept.push(group);
        } else if group.len() < min_part {
            strays.extend(group);
        } else {
            kept.push(group);
        }
    }
    if kept.len() <= 1 {
        out.push(sp);
        return;
    }
    kept[home].extend(strays);
    let groups = kept;
    let total = sp.samples.len() as f64;
    for group in groups {
        let share = group.len() as f64 / total;
        let mut child = Species::new(*next_id, SampleSet::new(group), sp.population * share);
        *next_id += 1;
        child.growth_rate = sp.growth_rate * share;
        out.push(child);
    }
}

/// Points along the mean-to-mean segment probed by the valley test.
const VALLEY_PROBES: usize = 10;

/// Whether two species should merge.
pub fn should_merge(a: &Species, b: &Species) -> bool {
    let da = a.domain_or_point();
    let db = b.domain_or_point();
    if !da.intersects(&db) {
        return false;
    }
    let floor = 0.5 * a.samples.mean_weight().min(b.samples.mean_weight());
    let all: Vec<&WeightedSample> = a.samples.iter().chain(b.samples.iter()).collect();
    (0..VALLEY_PROBES).all(|k| {
        let t = k as f64 / (VALLEY_PROBES - 1) as f64;
        let px = da.center.x + t * (db.center.x - da.center.x);
        let py = da.center.y + t * (db.center.y - da.center.y);
        let nearest = all
            .iter()
            .min_by(|p, q| {
                let dp = (p.pose.x - px).powi(2) + (p.pose.y - py).powi(2);
                let dq = (q.pose.x - px).powi(2) + (q.pose.y - py).powi(2);
                dp.total_cmp(&dq)
            })
            .expect("species are non-empty");
        nearest.weight >= floor
    })
}

fn merge_all(mut species: Vec<Species>) -> Vec<Species> {
    'restart: loop {
        for i in 0..species.len() {
            for j in i + 1..species.len() {
                if species[i].samples.is_empty() || species[j].samples.is_empty() {
                    continue;
                }
                if should_merge(&species[i], &species[j]) {
                    let b = species.remove(j);
                    let a = species.remove(i);
                    species.insert(i, merge_pair(a, b));
                    continue 'restart;
                }
            }
        }
        return species;
    }
}

fn merge_pair(a: Species, b: Species) -> Species {
    let id = a.id.min(b.id);
    let population = a.population + b.population;
    let growth = a.growth_rate + b.growth_rate;
    let mut samples = a.samples;
    samples.extend(b.samples.samples);
    let mut merged = Species::new(id, samples, population);
    merged.growth_rate = growth;
    merged
}
