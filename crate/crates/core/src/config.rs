//! Run configuration with a plain `key = value` text form.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coevolution::DynamicsParams;
use crate::error::{Error, Result};
use crate::evolution::EvolutionParams;
use crate::models::NoiseParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub noise: NoiseParams,
    pub dynamics: DynamicsParams,
    pub evolution: EvolutionParams,
    /// Clustering grid resolution over the map extent.
    pub grid_nx: usize,
    pub grid_ny: usize,
    /// Grid whose connected components decide species splits.
    pub split_nx: usize,
    pub split_ny: usize,
    pub mu: f64,
    pub eta: f64,
    pub n_test: usize,
    /// Sample count of the MCL and GMCL filters.
    pub fixed_n: usize,
    /// Smallest materialized species.
    pub min_species_size: usize,
    pub beams: usize,
    pub max_range: f64,
    /// Distance within which a hypothesis counts as matching the truth.
    pub association_radius: f64,
    /// Share of samples near the ghost poses that marks convergence.
    pub convergence_mass: f64,
    /// Trajectory discretization of generated logs.
    pub step_len: f64,
    pub seeds: Vec<u64>,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            noise: NoiseParams::default(),
            dynamics: DynamicsParams::default(),
            evolution: EvolutionParams::default(),
            grid_nx: 6,
            grid_ny: 6,
            split_nx: 60,
            split_ny: 60,
            mu: 0.85,
            eta: 2.0,
            n_test: 100_000,
            fixed_n: 500,
            min_species_size: 3,
            beams: 32,
            max_range: 10.0,
            association_radius: 1.0,
            convergence_mass: 0.9,
            step_len: 0.25,
            seeds: (0..20).collect(),
        }
    }
}

pub const KEYS: &[&str] = &[
    "alpha_trans",
    "alpha_rot",
    "alpha_trans_rot",
    "sigma_hit",
    "z_hit",
    "z_rand",
    "r",
    "delta",
    "epsilon",
    "p_c",
    "p_m",
    "sigma_mut_x",
    "sigma_mut_y",
    "sigma_mut_theta",
    "grid_nx",
    "grid_ny",
    "split_nx",
    "split_ny",
    "mu",
    "eta",
    "n_test",
    "fixed_n",
    "min_species_size",
    "beams",
    "max_range",
    "association_radius",
    "convergence_mass",
    "step_len",
    "seeds",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("bad value {value:?} for {key}")))
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "alpha_trans" => self.noise.alpha_trans = parse(key, v)?,
            "alpha_rot" => self.noise.alpha_rot = parse(key, v)?,
            "alpha_trans_rot" => self.noise.alpha_trans_rot = parse(key, v)?,
            "sigma_hit" => self.noise.sigma_hit = parse(key, v)?,
            "z_hit" => self.noise.z_hit = parse(key, v)?,
            "z_rand" => self.noise.z_rand = parse(key, v)?,
            "r" => self.dynamics.r = parse(key, v)?,
            "delta" => self.dynamics.delta = parse(key, v)?,
            "epsilon" => self.dynamics.epsilon = parse(key, v)?,
            "p_c" => self.evolution.p_c = parse(key, v)?,
            "p_m" => self.evolution.p_m = parse(key, v)?,
            "sigma_mut_x" => self.evolution.sigma_mut[0] = parse(key, v)?,
            "sigma_mut_y" => self.evolution.sigma_mut[1] = parse(key, v)?,
            "sigma_mut_theta" => self.evolution.sigma_mut[2] = parse(key, v)?,
            "grid_nx" => self.grid_nx = parse(key, v)?,
            "grid_ny" => self.grid_ny = parse(key, v)?,
            "split_nx" => self.split_nx = parse(key, v)?,
            "split_ny" => self.split_ny = parse(key, v)?,
            "mu" => self.mu = parse(key, v)?,
            "eta" => self.eta = parse(key, v)?,
            "n_test" => self.n_test = parse(key, v)?,
            "fixed_n" => self.fixed_n = parse(key, v)?,
            "min_species_size" => self.min_species_size = parse(key, v)?,
            "beams" => self.beams = parse(key, v)?,
            "max_range" => self.max_range = parse(key, v)?,
            "association_radius" => self.association_radius = parse(key, v)?,
            "convergence_mass" => self.convergence_mass = parse(key, v)?,
            "step_len" => self.step_len = parse(key, v)?,
            "seeds" => {
                self.seeds = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_>>()?
            }
            other => return Err(Error::InvalidParameter(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        Ok(match key {
            "alpha_trans" => self.noise.alpha_trans.to_string(),
            "alpha_rot" => self.noise.alpha_rot.to_string(),
            "alpha_trans_rot" => self.noise.alpha_trans_rot.to_string(),
            "sigma_hit" => self.noise.sigma_hit.to_string(),
            "z_hit" => self.noise.z_hit.to_string(),
            "z_rand" => self.noise.z_rand.to_string(),
            "r" => self.dynamics.r.to_string(),
            "delta" => self.dynamics.delta.to_string(),
            "epsilon" => self.dynamics.epsilon.to_string(),
            "p_c" => self.evolution.p_c.to_string(),
            "p_m" => self.evolution.p_m.to_string(),
            "sigma_mut_x" => self.evolution.sigma_mut[0].to_string(),
            "sigma_mut_y" => self.evolution.sigma_mut[1].to_string(),
            "sigma_mut_theta" => self.evolution.sigma_mut[2].to_string(),
            "grid_nx" => self.grid_nx.to_string(),
            "grid_ny" => self.grid_ny.to_string(),
            "split_nx" => self.split_nx.to_string(),
            "split_ny" => self.split_ny.to_string(),
            "mu" => self.mu.to_string(),
            "eta" => self.eta.to_string(),
            "n_test" => self.n_test.to_string(),
            "fixed_n" => self.fixed_n.to_string(),
            "min_species_size" => self.min_species_size.to_string(),
            "beams" => self.beams.to_string(),
            "max_range" => self.max_range.to_string(),
            "association_radius" => self.association_radius.to_string(),
            "convergence_mass" => self.convergence_mass.to_string(),
            "step_len" => self.step_len.to_string(),
            "seeds" => self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
            other => return Err(Error::InvalidParameter(format!("unknown config key {other:?}"))),
        })
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: n + 1,
                msg: format!("expected key = value, got {line:?}"),
            })?;
            self.set(k, v).map_err(|e| Error::Parse {
                line: n + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("listed key"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        self.dynamics.validate()?;
        self.evolution.validate()?;
        if self.grid_nx == 0 || self.grid_ny == 0 || self.split_nx == 0 || self.split_ny == 0 {
            return Err(Error::InvalidParameter(
                "clustering and split grids must be non-empty".into(),
            ));
        }
        if !(self.mu > 0.0 && self.mu < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "mu must be in (0, 1), got {}",
                self.mu
            )));
        }
        if !(self.eta > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "eta must be positive, got {}",
                self.eta
            )));
        }
        if self.n_test == 0 || self.fixed_n == 0 || self.beams == 0 {
            return Err(Error::InvalidParameter(
                "n_test, fixed_n and beams must be positive".into(),
            ));
        }
        if self.min_species_size < 2 {
            return Err(Error::InvalidParameter("min_species_size must be at least 2".into()));
        }
        if !(self.max_range > 0.0 && self.association_radius > 0.0 && self.step_len > 0.0) {
            return Err(Error::InvalidParameter(
                "max_range, association_radius and step_len must be positive".into(),
            ));
        }
        if !(self.convergence_mass > 0.0 && self.convergence_mass <= 1.0) {
            return Err(Error::InvalidParameter("convergence_mass must be in (0, 1]".into()));
        }
        Ok(())
    }
}
