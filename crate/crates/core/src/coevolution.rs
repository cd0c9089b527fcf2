//! Population dynamics between species: living domains, environment
//! resources, carrying capacities and Lotka-Volterra competition.

use std::f64::consts::PI;

use nalgebra::{Matrix2, SymmetricEigen, Vector2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::WeightedSample;
use crate::world::Pose;

/// Eigenvalue floor for collapsed species.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Volume constant of the unit ball in the (x, y) subspace.
const UNIT_DISK_AREA: f64 = PI;

/// The 2σ ellipse a species occupies in the (x, y) plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LivingDomain {
    pub center: Pose,
    /// Column `j` is the unit principal axis `e_j`.
    pub axes: [[f64; 2]; 2],
    /// Principal variances `d_j`, floored at [`VARIANCE_FLOOR`].
    pub variances: [f64; 2],
    /// `2 √d_j` along each axis.
    pub radii: [f64; 2],
    /// Ellipse area.
    pub size: f64,
}

impl LivingDomain {
    /// Whether `(x, y)` lies inside the ellipse.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.mahalanobis2(x, y) <= 1.0
    }

    /// Squared normalized distance; 1 on the boundary.
    pub fn mahalanobis2(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.center.x;
        let dy = y - self.center.y;
        let mut acc = 0.0;
        for j in 0..2 {
            let along = dx * self.axes[0][j] + dy * self.axes[1][j];
            let r = self.radii[j].max(1e-9);
            acc += (along / r).powi(2);
        }
        acc
    }

    /// Point on the boundary at parameter `phi`.
    pub fn boundary_point(&self, phi: f64) -> (f64, f64) {
        let (s, c) = phi.sin_cos();
        self.point_at(c, s)
    }

    fn point_at(&self, u: f64, v: f64) -> (f64, f64) {
        let a = self.radii[0] * u;
        let b = self.radii[1] * v;
        (
            self.center.x + a * self.axes[0][0] + b * self.axes[0][1],
            self.center.y + a * self.axes[1][0] + b * self.axes[1][1],
        )
    }

    /// Uniform point inside the ellipse.
    pub fn sample_point<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let rho = rng.random::<f64>().sqrt();
        let phi = rng.random::<f64>() * 2.0 * PI;
        self.point_at(rho * phi.cos(), rho * phi.sin())
    }

    /// Overlap test: either center lies in the other ellipse, or a sampled
    /// point of one boundary lies inside the other.
    pub fn intersects(&self, other: &LivingDomain) -> bool {
        const BOUNDARY_POINTS: usize = 64;
        if self.contains(other.center.x, other.center.y) || other.contains(self.center.x, self.center.y) {
            return true;
        }
        (0..BOUNDARY_POINTS).any(|k| {
            let phi = 2.0 * PI * k as f64 / BOUNDARY_POINTS as f64;
            let (x, y) = self.boundary_point(phi);
            let (u, v) = other.boundary_point(phi);
            other.contains(x, y) || self.contains(u, v)
        })
    }
}

/// Living domain of a set of weighted samples.
pub fn living_domain(samples: &[WeightedSample]) -> Result<LivingDomain> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    let mut total: f64 = samples.iter().map(|s| s.weight).sum();
    let uniform = !(total > 0.0);
    if uniform {
        total = samples.len() as f64;
    }
    let w = |s: &WeightedSample| if uniform { 1.0 } else { s.weight };
    let mut mean = Vector2::zeros();
    let (mut c, mut sn) = (0.0, 0.0);
    for s in samples {
        mean += Vector2::new(s.pose.x, s.pose.y) * (w(s) / total);
        c += w(s) * s.pose.theta.cos();
        sn += w(s) * s.pose.theta.sin();
    }
    let mut q = Matrix2::zeros();
    for s in samples {
        let d = Vector2::new(s.pose.x, s.pose.y) - mean;
        q += d * d.transpose() * (w(s) / total);
    }
    let eig = SymmetricEigen::new(q);
    let mut variances = [eig.eigenvalues[0], eig.eigenvalues[1]];
    let mut order = [0usize, 1];
    if variances[1] > variances[0] {
        order = [1, 0];
        variances = [variances[1], variances[0]];
    }
    let variances = variances.map(|d| d.max(VARIANCE_FLOOR));
    let axes = [
        [eig.eigenvectors[(0, order[0])], eig.eigenvectors[(0, order[1])]],
        [eig.eigenvectors[(1, order[0])], eig.eigenvectors[(1, order[1])]],
    ];
    let radii = variances.map(|d| 2.0 * d.sqrt());
    let center = Pose::new(mean.x, mean.y, if c == 0.0 && sn == 0.0 { 0.0 } else { sn.atan2(c) });
    Ok(LivingDomain {
        center,
        axes,
        variances,
        radii,
        size: ellipse_size(&variances),
    })
}

/// Area of the ellipse with radii `2 √d_j`: `2ⁿ · C_n · ∏ √d_j`.
pub fn ellipse_size(variances: &[f64; 2]) -> f64 {
    4.0 * UNIT_DISK_AREA * variances.iter().map(|d| d.sqrt()).product::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsParams {
    /// Maximum growth rate per step.
    pub r: f64,
    /// Resources per unit living domain.
    pub delta: f64,
    /// Minimum living domain a species keeps, m².
    pub epsilon: f64,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        Self {
            r: 0.2,
            delta: 80.0,
            epsilon: 0.5,
        }
    }
}

impl DynamicsParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("r", self.r), ("delta", self.delta), ("epsilon", self.epsilon)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Resources held by a species with living-domain size `area`.
pub fn resources(area: f64, p: &DynamicsParams) -> f64 {
    if area > p.epsilon {
        p.delta * area
    } else {
        p.delta * p.epsilon
    }
}

/// Carrying capacity `exp(1 − w̄) · R`.
pub fn carrying_capacity(fitness: f64, total_resources: f64) -> f64 {
    (1.0 - fitness).exp() * total_resources
}

/// Row-major `α[i][j] = w̄_j / w̄_i`.
pub fn competition_matrix(fitness: &[f64]) -> Result<Vec<Vec<f64>>> {
    if let Some(&bad) = fitness.iter().find(|&&f| !(f > 0.0)) {
        return Err(Error::ZeroFitness(bad));
    }
    Ok(fitness
        .iter()
        .map(|fi| fitness.iter().map(|fj| fj / fi).collect())
        .collect())
}

/// `dN_i/dt = r N_i (1 − (N_i + Σ_{j≠i} α_ij N_j) / K_i)` for every species.
pub fn growth_rates(populations: &[f64], capacities: &[f64], alpha: &[Vec<f64>], r: f64) -> Vec<f64> {
    populations
        .iter()
        .enumerate()
        .map(|(i, &ni)| {
            let pressure: f64 = populations
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(j, &nj)| alpha[i][j] * nj)
                .sum();
            r * ni * (1.0 - (ni + pressure) / capacities[i])
        })
        .collect()
}

/// One population update `N + dN`. When that step would overshoot past
/// zero, the species' equation `dN/dt = aN − bN²` (competitors held fixed,
/// `b = r/K`) is instead integrated exactly over one unit of time.
pub fn advance_population(n: f64, dn: f64, capacity: f64, r: f64) -> f64 {
    if n + dn > 0.0 {
        return n + dn;
    }
    if !(n > 0.0) {
        return 0.0;
    }
    let b = r / capacity;
    let a = dn / n + b * n;
    if a.abs() < 1e-12 {
        return n / (1.0 + b * n);
    }
    a * n * a.exp() / (a + b * n * a.exp_m1())
}

/// Long-run outcome of two-species competition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Equilibrium {
    Species1Wins,
    Species2Wins,
    Bistable,
    Coexist,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub outcome: Equilibrium,
    /// Set when an isocline comparison was an exact tie.
    pub degenerate: bool,
}

/// Classifies the isocline arrangement of a two-species system.
pub fn classify_equilibrium(k1: f64, k2: f64, alpha12: f64, alpha21: f64) -> Result<Classification> {
    for (name, v) in [("K1", k1), ("K2", k2), ("alpha12", alpha12), ("alpha21", alpha21)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
        }
    }
    let s2_line = k2 / alpha21; // species-2 isocline crossing of the N1 axis
    let s1_line = k1 / alpha12; // species-1 isocline crossing of the N2 axis
    if s2_line == k1 || s1_line == k2 {
        return Ok(Classification {
            outcome: Equilibrium::Coexist,
            degenerate: true,
        });
    }
    let outcome = match (s2_line < k1, s1_line > k2) {
        (true, true) => Equilibrium::Species1Wins,
        (false, false) => Equilibrium::Species2Wins,
        (true, false) => Equilibrium::Bistable,
        (false, true) => Equilibrium::Coexist,
    };
    Ok(Classification {
        outcome,
        degenerate: false,
    })
}

/// Interior fixed point where both isoclines cross, if it is positive.
pub fn coexistence_point(k1: f64, k2: f64, alpha12: f64, alpha21: f64) -> Option<(f64, f64)> {
    let det = 1.0 - alpha12 * alpha21;
    if det.abs() < 1e-15 {
        return None;
    }
    let n1 = (k1 - alpha12 * k2) / det;
    let n2 = (k2 - alpha21 * k1) / det;
    (n1 > 0.0 && n2 > 0.0).then_some((n1, n2))
}
