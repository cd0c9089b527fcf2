//! The three filter loops and the analytic cost model.
//!
//! All variants draw their per-step seeds from the state stream in the same
//! order (resampling, importance sampling, evolution), so GMCL with both
//! operator probabilities at zero reproduces MCL bit for bit.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coevolution::{advance_population, carrying_capacity, competition_matrix, growth_rates, resources};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::evolution::{evolve_species, EvolutionParams};
use crate::filter::{importance_step, WeightedSample};
use crate::models::{likelihood_unchecked, OdometryControl, ScanObservation};
use crate::rng::{SimRng, StreamSplitter};
use crate::species::{
    allocate_and_select, draw_test_set, initial_sample_size, skiz_partition, split_merge, threshold_grids, GridSpec,
    Species,
};
use crate::world::{OccupancyGrid, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Mcl,
    Gmcl,
    Ceamcl,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Mcl, Variant::Gmcl, Variant::Ceamcl];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Mcl => "mcl",
            Variant::Gmcl => "gmcl",
            Variant::Ceamcl => "ceamcl",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mcl" => Ok(Variant::Mcl),
            "gmcl" => Ok(Variant::Gmcl),
            "ceamcl" => Ok(Variant::Ceamcl),
            _ => Err(Error::InvalidParameter(format!("unknown variant {s:?}"))),
        }
    }
}

/// Work counters of one step, used for cost fitting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepStats {
    /// Samples drawn from the motion model and scored.
    pub propagated: usize,
    /// Samples produced by resampling.
    pub resampled: usize,
    pub crossovers: usize,
    pub mutations: usize,
    /// Operator trials, fired or not.
    pub evolution_trials: usize,
    /// Samples added from living domains.
    pub injected: usize,
    /// Species removed because their population rounded to zero.
    pub extinctions: usize,
}

impl StepStats {
    pub fn likelihood_evals(&self) -> usize {
        self.propagated + 2 * self.crossovers + self.mutations
    }
}

/// Filter state between steps.
#[derive(Debug, Clone)]
pub struct FilterState {
    pub variant: Variant,
    pub species: Vec<Species>,
    pub t: usize,
    /// Total environment resources from the last dynamics evaluation.
    pub resources: f64,
    pub config: Arc<Config>,
    pub map: Arc<OccupancyGrid>,
    pub rng: SimRng,
    pub last_stats: StepStats,
    next_id: u32,
    grid: GridSpec,
    split_grid: GridSpec,
}

impl FilterState {
    /// Builds the initial sample set from the first observation.
    pub fn init(
        variant: Variant,
        map: Arc<OccupancyGrid>,
        y0: &ScanObservation,
        config: Arc<Config>,
        mut rng: SimRng,
    ) -> Result<Self> {
        config.validate()?;
        let grid = GridSpec::covering(&map, config.grid_nx, config.grid_ny)?;
        let split_grid = GridSpec::covering(&map, config.split_nx, config.split_ny)?;
        let mut species = match variant {
            Variant::Mcl | Variant::Gmcl => {
                let set = draw_test_set(&map, y0, config.fixed_n, &config.noise, &mut rng)?;
                vec![Species::new(1, set, config.fixed_n as f64)]
            }
            Variant::Ceamcl => {
                let test = draw_test_set(&map, y0, config.n_test, &config.noise, &mut rng)?;
                let thresholded = threshold_grids(&test, &grid, config.mu)?;
                let n0 = initial_sample_size(&thresholded, config.eta)?;
                let partition = skiz_partition(&thresholded)?;
                allocate_and_select(&partition, &test, n0)?
            }
        };
        let next_id = species.iter().map(|s| s.id).max().unwrap_or(0) + 1;
        let mut state = Self {
            variant,
            species: Vec::new(),
            t: 0,
            resources: 0.0,
            config,
            map,
            rng,
            last_stats: StepStats::default(),
            next_id,
            grid,
            split_grid,
        };
        if variant == Variant::Ceamcl {
            state.update_dynamics(&mut species, false)?;
        } else {
            for s in &mut species {
                s.fitness = s.samples.mean_weight();
            }
        }
        for s in &mut species {
            s.samples.normalize()?;
        }
        state.species = species;
        Ok(state)
    }

    /// Advances by one control/observation pair.
    pub fn step(self, u: &OdometryControl, y: &ScanObservation) -> Result<Self> {
        match self.variant {
            Variant::Mcl => self.step_mcl(u, y),
            Variant::Gmcl => self.step_gmcl(u, y),
            Variant::Ceamcl => self.step_ceamcl(u, y),
        }
    }

    pub fn step_mcl(self, u: &OdometryControl, y: &ScanObservation) -> Result<Self> {
        self.expect(Variant::Mcl)?;
        let evolution = EvolutionParams::disabled();
        self.step_single(u, y, &evolution)
    }

    pub fn step_gmcl(self, u: &OdometryControl, y: &ScanObservation) -> Result<Self> {
        self.expect(Variant::Gmcl)?;
        let evolution = self.config.evolution;
        self.step_single(u, y, &evolution)
    }

    fn expect(&self, v: Variant) -> Result<()> {
        if self.variant != v {
            return Err(Error::WrongVariant {
                expected: v.as_str(),
                actual: self.variant.as_str(),
            });
        }
        Ok(())
    }

    fn step_single(mut self, u: &OdometryControl, y: &ScanObservation, evolution: &EvolutionParams) -> Result<Self> {
        let mut stats = StepStats::default();
        let resample_seeds = StreamSplitter::from_rng(&mut self.rng);
        let n = self.config.fixed_n;
        let sp = &mut self.species[0];
        let resampled = sp.samples.resample(n, &mut resample_seeds.stream(0))?;
        stats.resampled = n;
        let mut moved = importance_step(&resampled, u, y, &self.map, &self.config.noise, &mut self.rng)?;
        stats.propagated = n;
        let evolve_seeds = StreamSplitter::from_rng(&mut self.rng);
        let ev = evolve_species(
            &mut moved,
            y,
            &self.map,
            &self.config.noise,
            evolution,
            &mut evolve_seeds.stream(0),
        );
        stats.crossovers = ev.crossovers;
        stats.mutations = ev.mutations;
        if evolution.p_c > 0.0 || evolution.p_m > 0.0 {
            stats.evolution_trials = n / 2 + n;
        }
        sp.fitness = moved.mean_weight();
        moved.normalize()?;
        sp.samples = moved;
        self.t += 1;
        self.last_stats = stats;
        Ok(self)
    }

    pub fn step_ceamcl(mut self, u: &OdometryControl, y: &ScanObservation) -> Result<Self> {
        self.expect(Variant::Ceamcl)?;
        let mut stats = StepStats::default();
        let resample_seeds = StreamSplitter::from_rng(&mut self.rng);
        let inject_seeds = StreamSplitter::from_rng(&mut self.rng);
        let floor = self.config.min_species_size;
        let r = self.config.dynamics.r;
        let mut species = std::mem::take(&mut self.species);

        // size determination: inject for growing species, then extinction
        for (k, sp) in species.iter_mut().enumerate() {
            if sp.growth_rate > 0.0 {
                let n_new = sp.growth_rate.round() as usize;
                if n_new > 0 {
                    let mut rng = inject_seeds.stream(k);
                    let domain = sp.domain_or_point();
                    let w = sp.samples.mean_weight();
                    for _ in 0..n_new {
                        let (x, yy) = domain.sample_point(&mut rng);
                        let theta = rng.random_range(-PI..PI);
                        sp.samples.push(WeightedSample::new(Pose::new(x, yy, theta), w));
                    }
                    stats.injected += n_new;
                }
            }
            sp.population = advance_population(sp.population, sp.growth_rate, sp.capacity, r);
        }
        let before = species.len();
        species.retain(|sp| sp.population.round() >= 1.0);
        stats.extinctions = before - species.len();
        if species.is_empty() {
            return Err(Error::AllExtinct(self.t));
        }

        // resampling
        for (k, sp) in species.iter_mut().enumerate() {
            let target = (sp.population.round() as usize).max(floor);
            sp.samples = sp.samples.resample(target, &mut resample_seeds.stream(k))?;
            stats.resampled += target;
        }

        // importance sampling
        for sp in species.iter_mut() {
            sp.samples = importance_step(&sp.samples, u, y, &self.map, &self.config.noise, &mut self.rng)?;
            stats.propagated += sp.samples.len();
        }

        // intra-species evolution
        let evolve_seeds = StreamSplitter::from_rng(&mut self.rng);
        let (map, noise, evolution) = (&*self.map, &self.config.noise, &self.config.evolution);
        let ev: Vec<_> = species
            .par_iter_mut()
            .enumerate()
            .map(|(k, sp)| {
                let n = sp.samples.len();
                let s = evolve_species(&mut sp.samples, y, map, noise, evolution, &mut evolve_seeds.stream(k));
                (s, n / 2 + n)
            })
            .collect();
        for (s, trials) in ev {
            stats.crossovers += s.crossovers;
            stats.mutations += s.mutations;
            stats.evolution_trials += trials;
        }

        // splitting and merging
        let mut species = split_merge(species, &self.split_grid, floor, &mut self.next_id);

        self.update_dynamics(&mut species, true)?;
        for sp in &mut species {
            sp.samples.normalize()?;
        }
        self.species = species;
        self.t += 1;
        self.last_stats = stats;
        Ok(self)
    }

    /// Fitness, living domains, resources, capacities and growth rates.
    /// With `grow` unset the cached growth rates are left at zero.
    fn update_dynamics(&mut self, species: &mut [Species], grow: bool) -> Result<()> {
        let p = &self.config.dynamics;
        let mut total = 0.0;
        for sp in species.iter_mut() {
            sp.fitness = sp.samples.mean_weight();
            let domain = sp.domain_or_point();
            total += resources(domain.size, p);
            sp.living_domain = Some(domain);
        }
        self.resources = total;
        let fitness: Vec<f64> = species.iter().map(|s| s.fitness).collect();
        let alpha = competition_matrix(&fitness)?;
        let caps: Vec<f64> = fitness.iter().map(|&f| carrying_capacity(f, total)).collect();
        let pops: Vec<f64> = species.iter().map(|s| s.population).collect();
        let rates = growth_rates(&pops, &caps, &alpha, p.r);
        for ((sp, k), g) in species.iter_mut().zip(caps).zip(rates) {
            sp.capacity = k;
            sp.growth_rate = if grow { g } else { 0.0 };
        }
        Ok(())
    }

    /// Species with the largest average importance factor.
    pub fn best_species(&self) -> Option<&Species> {
        self.species
            .iter()
            .reduce(|best, s| if s.fitness > best.fitness { s } else { best })
    }

    /// Reported pose: mean of the best species.
    pub fn estimate(&self) -> Pose {
        self.best_species().map(|s| s.mean_pose()).unwrap_or_default()
    }

    pub fn total_samples(&self) -> usize {
        self.species.iter().map(|s| s.samples.len()).sum()
    }

    /// Clustering grid of the initial partition.
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn split_grid(&self) -> &GridSpec {
        &self.split_grid
    }

    /// All samples of all species; weights are per-species normalized.
    pub fn all_samples(&self) -> impl Iterator<Item = &WeightedSample> {
        self.species.iter().flat_map(|s| s.samples.iter())
    }

    /// Likelihood of `y` at `pose` under this filter's noise model.
    pub fn score(&self, y: &ScanObservation, pose: &Pose) -> f64 {
        likelihood_unchecked(y, pose, &self.map, &self.config.noise)
    }
}

/// Per-sample cost constants, seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Importance-factor evaluation.
    pub t_f: f64,
    /// Motion-model draw.
    pub t_s: f64,
    /// Resampling, normalization and summary.
    pub t_r: f64,
    /// Splitting and merging.
    pub t_m: f64,
    /// `p_c + p_m`.
    pub p: f64,
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        if [self.t_f, self.t_s, self.t_r, self.t_m, self.p]
            .iter()
            .any(|v| !(*v >= 0.0))
        {
            return Err(Error::InvalidParameter("cost constants must be non-negative".into()));
        }
        Ok(())
    }

    /// Per-iteration MCL cost with `n` samples.
    pub fn mcl_time(&self, n: usize) -> f64 {
        n as f64 * (self.t_f + self.t_s + self.t_r)
    }

    /// Per-iteration CEAMCL cost with `n` samples.
    pub fn ceamcl_time(&self, n: usize) -> f64 {
        n as f64 * ((1.0 + self.p) * self.t_f + 2.0 * self.t_s + self.t_r + self.t_m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostRatio {
    /// From the full per-iteration forms.
    pub exact: f64,
    /// `(1 + p) N_C / N_M`.
    pub approx: f64,
}

/// Predicted CEAMCL over MCL time per iteration.
pub fn predict_cost_ratio(model: &CostModel, n_c: usize, n_m: usize) -> Result<CostRatio> {
    model.validate()?;
    if n_m == 0 {
        return Err(Error::InvalidParameter("n_m must be positive".into()));
    }
    let mcl = model.mcl_time(n_m);
    if !(mcl > 0.0) {
        return Err(Error::InvalidParameter("MCL cost must be positive".into()));
    }
    Ok(CostRatio {
        exact: model.ceamcl_time(n_c) / mcl,
        approx: (1.0 + model.p) * n_c as f64 / n_m as f64,
    })
}
