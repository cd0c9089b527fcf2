//! Real-coded genetic operators applied within a species.
//!
//! Both operators are selection-guarded: offspring replace parents only when
//! they score at least as well, so a species' best and mean weights never
//! drop.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{SampleSet, WeightedSample};
use crate::models::{likelihood_unchecked, NoiseParams, ScanObservation};
use crate::world::{normalize_angle, OccupancyGrid, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolutionParams {
    pub p_c: f64,
    pub p_m: f64,
    /// Per-component mutation std: x, y (metres), heading (radians).
    pub sigma_mut: [f64; 3],
}

impl Default for EvolutionParams {
    fn default() -> Self {
        Self {
            p_c: 0.85,
            p_m: 0.15,
            sigma_mut: [0.1, 0.1, 0.05],
        }
    }
}

impl EvolutionParams {
    pub fn disabled() -> Self {
        Self {
            p_c: 0.0,
            p_m: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_c", self.p_c), ("p_m", self.p_m)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if self.sigma_mut.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidParameter("sigma_mut must be non-negative".into()));
        }
        Ok(())
    }
}

/// Blend of two poses: `ξ a + (1 − ξ) b`, heading along the shorter arc.
pub fn blend(a: &Pose, b: &Pose, xi: f64) -> Pose {
    Pose::new(
        xi * a.x + (1.0 - xi) * b.x,
        xi * a.y + (1.0 - xi) * b.y,
        a.theta - (1.0 - xi) * normalize_angle(a.theta - b.theta),
    )
}

/// Crossover with a fixed blend factor. Returns the two best of
/// `{p1, p2, c1, c2}`; ties prefer parents, then earlier entries.
pub fn crossover_with(
    p1: &WeightedSample,
    p2: &WeightedSample,
    xi: f64,
    y: &ScanObservation,
    map: &OccupancyGrid,
    noise: &NoiseParams,
) -> (WeightedSample, WeightedSample) {
    let c1 = blend(&p1.pose, &p2.pose, xi);
    let c2 = blend(&p2.pose, &p1.pose, xi);
    let mut family = Vec::with_capacity(4);
    family.push(*p1);
    family.push(*p2);
    // A child that reproduces a parent exactly (ξ ∈ {0, 1}) is not a new
    // individual and does not compete.
    for c in [c1, c2] {
        if c != p1.pose && c != p2.pose {
            family.push(WeightedSample::new(c, likelihood_unchecked(y, &c, map, noise)));
        }
    }
    top_two(&family)
}

fn top_two(family: &[WeightedSample]) -> (WeightedSample, WeightedSample) {
    let mut order: Vec<usize> = (0..family.len()).collect();
    // stable sort keeps the parent-first, index-order tie break
    order.sort_by(|&a, &b| family[b].weight.total_cmp(&family[a].weight));
    (family[order[0]], family[order[1]])
}

/// Crossover with `ξ ~ U[0, 1]`.
pub fn crossover<R: Rng + ?Sized>(
    p1: &WeightedSample,
    p2: &WeightedSample,
    y: &ScanObservation,
    map: &OccupancyGrid,
    noise: &NoiseParams,
    rng: &mut R,
) -> (WeightedSample, WeightedSample) {
    let xi: f64 = rng.random();
    crossover_with(p1, p2, xi, y, map, noise)
}

/// Gaussian mutation; the child is scored at its own pose and kept only if
/// it beats the parent.
pub fn mutate<R: Rng + ?Sized>(
    p: &WeightedSample,
    sigma: &[f64; 3],
    y: &ScanObservation,
    map: &OccupancyGrid,
    noise: &NoiseParams,
    rng: &mut R,
) -> WeightedSample {
    let mut tau = [0.0; 3];
    for (t, s) in tau.iter_mut().zip(sigma) {
        let z: f64 = StandardNormal.sample(rng);
        *t = s * z;
    }
    let child = Pose::new(p.pose.x + tau[0], p.pose.y + tau[1], p.pose.theta + tau[2]);
    let w = likelihood_unchecked(y, &child, map, noise);
    if w > p.weight {
        WeightedSample::new(child, w)
    } else {
        *p
    }
}

/// Counts of operator applications in one evolution pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvolutionStats {
    pub crossovers: usize,
    pub mutations: usize,
}

impl EvolutionStats {
    /// Likelihood evaluations performed.
    pub fn likelihood_evals(&self) -> usize {
        2 * self.crossovers + self.mutations
    }
}

/// One generation: `⌊N/2⌋` crossover trials then `N` mutation trials, each
/// firing with its probability and writing survivors back in place.
///
/// Every trial draws its Bernoulli variate first; the member indices and the
/// operator's own randomness are drawn only when it fires.
pub fn evolve_species<R: Rng + ?Sized>(
    samples: &mut SampleSet,
    y: &ScanObservation,
    map: &OccupancyGrid,
    noise: &NoiseParams,
    params: &EvolutionParams,
    rng: &mut R,
) -> EvolutionStats {
    let n = samples.len();
    let mut stats = EvolutionStats::default();
    if n == 0 {
        return stats;
    }
    if n >= 2 {
        for _ in 0..n / 2 {
            if rng.random::<f64>() >= params.p_c {
                continue;
            }
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            let (a, b) = crossover(&samples[i], &samples[j], y, map, noise, rng);
            samples[i] = a;
            samples[j] = b;
            stats.crossovers += 1;
        }
    }
    for _ in 0..n {
        if rng.random::<f64>() >= params.p_m {
            continue;
        }
        let i = rng.random_range(0..n);
        samples[i] = mutate(&samples[i], &params.sigma_mut, y, map, noise, rng);
        stats.mutations += 1;
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{default_bearings, likelihood};
    use crate::rng::seeded;
    use crate::world::build_symmetric_map;

    fn setup() -> (OccupancyGrid, ScanObservation, NoiseParams, Pose) {
        let map = build_symmetric_map(15.0, 2, 1.0, 0.1).unwrap();
        let truth = Pose::new(3.75, 3.75, 0.4);
        let y = ScanObservation::simulate(&map, &truth, &default_bearings(16), 10.0);
        (map, y, NoiseParams::default(), truth)
    }

    fn scored(p: Pose, y: &ScanObservation, map: &OccupancyGrid, noise: &NoiseParams) -> WeightedSample {
        WeightedSample::new(p, likelihood(y, &p, map, noise).unwrap())
    }

    #[test]
    fn blend_spot_value() {
        // c1 = ξ p1 + (1 − ξ) p2, c2 = (1 − ξ) p1 + ξ p2
        let p1 = Pose::new(0.0, 0.0, 0.0);
        let p2 = Pose::new(10.0, 10.0, 0.0);
        let c1 = blend(&p1, &p2, 0.3);
        let c2 = blend(&p2, &p1, 0.3);
        assert!((c1.x - 7.0).abs() < 1e-12 && (c1.y - 7.0).abs() < 1e-12 && c1.theta == 0.0);
        assert!((c2.x - 3.0).abs() < 1e-12 && (c2.y - 3.0).abs() < 1e-12 && c2.theta == 0.0);
    }

    #[test]
    fn blend_heading_takes_short_arc() {
        let m = blend(&Pose::new(0.0, 0.0, 3.0), &Pose::new(0.0, 0.0, -3.0), 0.5);
        assert!(m.theta.abs() > 3.0);
    }

    #[test]
    fn midpoint_and_identity_crossovers() {
        let (map, y, noise, truth) = setup();
        let p1 = scored(truth, &y, &map, &noise);
        let p2 = scored(Pose::new(4.5, 3.0, 0.1), &y, &map, &noise);
        let c1 = blend(&p1.pose, &p2.pose, 0.5);
        let c2 = blend(&p2.pose, &p1.pose, 0.5);
        assert!(c1.distance_xy(&c2) < 1e-12);
        let (a, b) = crossover_with(&p1, &p2, 1.0, &y, &map, &noise);
        assert_eq!((a, b), (p1, p2));
    }

    #[test]
    fn zero_mutation_keeps_parent() {
        let (map, y, noise, _) = setup();
        let p = scored(Pose::new(4.0, 3.0, 0.2), &y, &map, &noise);
        let out = mutate(&p, &[0.0; 3], &y, &map, &noise, &mut seeded(1));
        assert_eq!(out, p);
    }

    #[test]
    fn mutation_escapes_wall() {
        let (map, y, noise, truth) = setup();
        // parent sits inside the partition wall, just beside the truth's mirror
        let parent = scored(Pose::new(7.5, 3.0, truth.theta), &y, &map, &noise);
        let mut rng = seeded(8);
        let mut escaped = false;
        for _ in 0..200 {
            let out = mutate(&parent, &[1.0, 1.0, 0.0], &y, &map, &noise, &mut rng);
            assert!(out.weight >= parent.weight);
            if out.weight > parent.weight {
                assert!(map.is_free(out.pose.x, out.pose.y));
                escaped = true;
            }
        }
        assert!(escaped);
    }

    #[test]
    fn disabled_evolution_is_noop() {
        let (map, y, noise, _) = setup();
        let mut rng = seeded(3);
        let mut set: SampleSet = (0..20)
            .map(|_| scored(map.sample_free_pose(&mut rng), &y, &map, &noise))
            .collect();
        let before = set.clone();
        let stats = evolve_species(&mut set, &y, &map, &noise, &EvolutionParams::disabled(), &mut rng);
        assert_eq!(set, before);
        assert_eq!(stats, EvolutionStats::default());
    }
}
