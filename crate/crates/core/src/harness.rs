//! Synthetic logs, experiment runners and metrics.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::driver::{predict_cost_ratio, CostModel, CostRatio, FilterState, StepStats, Variant};
use crate::error::{Error, Result};
use crate::filter::SampleSet;
use crate::models::{default_bearings, sample_motion, NoiseParams, OdometryControl, ScanObservation};
use crate::rng::seeded;
use crate::species::{connected_regions, GridSpec};
use crate::world::{OccupancyGrid, Pose};

/// One entry of a data log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    /// Odometry reading that moved the robot from the previous record.
    pub control: OdometryControl,
    pub scan: ScanObservation,
    pub truth: Pose,
}

/// Clearance kept between planned paths and walls.
pub const PLANNER_CLEARANCE: f64 = 0.3;

fn inflated_free(map: &OccupancyGrid, clearance: f64) -> Vec<bool> {
    let (w, h) = (map.width(), map.height());
    let k = (clearance / map.resolution()).ceil() as isize;
    let mut free = vec![true; w * h];
    for iy in 0..h {
        for ix in 0..w {
            if !map.is_occupied(ix, iy) {
                continue;
            }
            for dy in -k..=k {
                for dx in -k..=k {
                    if dx * dx + dy * dy > k * k {
                        continue;
                    }
                    let (nx, ny) = (ix as isize + dx, iy as isize + dy);
                    if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h {
                        free[ny as usize * w + nx as usize] = false;
                    }
                }
            }
        }
    }
    free
}

fn line_clear(map: &OccupancyGrid, free: &[bool], a: (f64, f64), b: (f64, f64)) -> bool {
    let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
    let n = (len / (0.5 * map.resolution())).ceil().max(1.0) as usize;
    (0..=n).all(|i| {
        let t = i as f64 / n as f64;
        match map.cell_of(a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)) {
            Some((ix, iy)) => free[iy * map.width() + ix],
            None => false,
        }
    })
}

/// Shortest 8-connected grid path with wall clearance, shortcut wherever a
/// straight segment stays clear. Endpoints are the exact inputs.
pub fn plan_path(map: &OccupancyGrid, start: (f64, f64), goal: (f64, f64)) -> Result<Vec<(f64, f64)>> {
    let free = inflated_free(map, PLANNER_CLEARANCE);
    let w = map.width();
    let cell = |p: (f64, f64)| -> Result<usize> {
        match map.cell_of(p.0, p.1) {
            Some((ix, iy)) if free[iy * w + ix] => Ok(iy * w + ix),
            _ => Err(Error::UnreachableGoal { x: p.0, y: p.1 }),
        }
    };
    let (s, g) = (cell(start)?, cell(goal)?);
    let mut prev = vec![usize::MAX; free.len()];
    prev[s] = s;
    let mut queue = VecDeque::from([s]);
    while let Some(c) = queue.pop_front() {
        if c == g {
            break;
        }
        let (cx, cy) = ((c % w) as isize, (c / w) as isize);
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)] {
            let (nx, ny) = (cx + dx, cy + dy);
            if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= map.height() {
                continue;
            }
            let n = ny as usize * w + nx as usize;
            // diagonal moves may not cut wall corners
            let corner_ok = free[cy as usize * w + nx as usize] && free[ny as usize * w + cx as usize];
            if free[n] && prev[n] == usize::MAX && corner_ok {
                prev[n] = c;
                queue.push_back(n);
            }
        }
    }
    if prev[g] == usize::MAX {
        return Err(Error::UnreachableGoal { x: goal.0, y: goal.1 });
    }
    let mut cells = vec![g];
    while *cells.last().unwrap() != s {
        cells.push(prev[*cells.last().unwrap()]);
    }
    cells.reverse();
    let mut raw: Vec<(f64, f64)> = cells.iter().map(|&c| map.cell_center(c % w, c / w)).collect();
    raw[0] = start;
    *raw.last_mut().unwrap() = goal;
    let mut path = vec![start];
    let mut i = 0;
    while i + 1 < raw.len() {
        let mut j = raw.len() - 1;
        while j > i + 1 && !line_clear(map, &free, raw[i], raw[j]) {
            j -= 1;
        }
        path.push(raw[j]);
        i = j;
    }
    Ok(path)
}

/// Points every `step` metres along a polyline, ending at its last vertex.
pub fn discretize(path: &[(f64, f64)], step: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for seg in path.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        let n = (len / step).ceil() as usize;
        for k in 1..=n {
            let t = k as f64 / n as f64;
            out.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
        }
    }
    out
}

fn noisy_scan<R: Rng + ?Sized>(
    map: &OccupancyGrid,
    truth: &Pose,
    bearings: &[f64],
    max_range: f64,
    sigma: f64,
    rng: &mut R,
) -> ScanObservation {
    let mut scan = ScanObservation::simulate(map, truth, bearings, max_range);
    if sigma > 0.0 {
        let n = Normal::new(0.0, sigma).expect("positive sigma");
        for r in &mut scan.ranges {
            *r = (*r + n.sample(rng)).clamp(0.0, max_range);
        }
    }
    scan
}

/// Drives from `start` to `goal` along a planned path. Logged controls are
/// the commanded motions; the true pose follows them through the motion
/// noise, and each new command steers from the true pose to the next
/// waypoint.
#[allow(clippy::too_many_arguments)]
pub fn generate_log<R: Rng + ?Sized>(
    map: &OccupancyGrid,
    start: Pose,
    goal: Pose,
    noise: &NoiseParams,
    step_len: f64,
    bearings: &[f64],
    max_range: f64,
    rng: &mut R,
) -> Result<Vec<StepRecord>> {
    if !(step_len > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "step_len must be positive, got {step_len}"
        )));
    }
    if !map.is_free(start.x, start.y) {
        return Err(Error::InvalidParameter(format!(
            "start ({}, {}) is not free",
            start.x, start.y
        )));
    }
    let mut records = vec![StepRecord {
        t: 0,
        control: OdometryControl::zero(),
        scan: noisy_scan(map, &start, bearings, max_range, noise.sigma_hit, rng),
        truth: start,
    }];
    if start.distance_xy(&goal) == 0.0 {
        return Ok(records);
    }
    let path = plan_path(map, (start.x, start.y), (goal.x, goal.y))?;
    let waypoints = discretize(&path, step_len);
    let mut truth = start;
    for (k, &(wx, wy)) in waypoints.iter().enumerate() {
        let heading = (wy - truth.y).atan2(wx - truth.x);
        let target = Pose::new(wx, wy, heading);
        let control = OdometryControl::between(&truth, &target);
        let next = sample_motion(&truth, &control, noise, rng);
        truth = if map.is_free(next.x, next.y) { next } else { target };
        records.push(StepRecord {
            t: k + 1,
            control,
            scan: noisy_scan(map, &truth, bearings, max_range, noise.sigma_hit, rng),
            truth,
        });
    }
    Ok(records)
}

/// Chains [`generate_log`] legs through `goals` in order.
#[allow(clippy::too_many_arguments)]
pub fn generate_route_log<R: Rng + ?Sized>(
    map: &OccupancyGrid,
    start: Pose,
    goals: &[(f64, f64)],
    noise: &NoiseParams,
    step_len: f64,
    bearings: &[f64],
    max_range: f64,
    rng: &mut R,
) -> Result<Vec<StepRecord>> {
    let mut records = generate_log(map, start, start, noise, step_len, bearings, max_range, rng)?;
    for &(gx, gy) in goals {
        let from = records.last().expect("start record").truth;
        let leg = generate_log(
            map,
            from,
            Pose::new(gx, gy, 0.0),
            noise,
            step_len,
            bearings,
            max_range,
            rng,
        )?;
        for mut r in leg.into_iter().skip(1) {
            r.t = records.len();
            records.push(r);
        }
    }
    Ok(records)
}

const LOG_MAGIC: &str = "ceamcl-log";

/// Text form: a header `ceamcl-log <beams> <max_range> <bearings...>`, then
/// one line per record `t rot1 trans rot2 <ranges...> x y theta`.
pub fn log_to_text(records: &[StepRecord]) -> Result<String> {
    let first = records.first().ok_or(Error::EmptyRequest)?;
    let mut out = String::new();
    let _ = write!(
        out,
        "{LOG_MAGIC} {} {}",
        first.scan.bearings.len(),
        first.scan.max_range
    );
    for b in &first.scan.bearings {
        let _ = write!(out, " {b}");
    }
    out.push('\n');
    for r in records {
        if r.scan.bearings != first.scan.bearings || r.scan.max_range != first.scan.max_range {
            return Err(Error::InvalidParameter("log records use different scan layouts".into()));
        }
        let c = &r.control;
        let _ = write!(out, "{} {} {} {}", r.t, c.delta_rot1, c.delta_trans, c.delta_rot2);
        for z in &r.scan.ranges {
            let _ = write!(out, " {z}");
        }
        let _ = writeln!(out, " {} {} {}", r.truth.x, r.truth.y, r.truth.theta);
    }
    Ok(out)
}

pub fn log_from_text(text: &str) -> Result<Vec<StepRecord>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let bad = |line: usize, msg: &str| Error::Parse {
        line: line + 1,
        msg: msg.to_string(),
    };
    let (hn, header) = lines.next().ok_or_else(|| bad(0, "empty log"))?;
    let mut fields = header.split_whitespace();
    if fields.next() != Some(LOG_MAGIC) {
        return Err(bad(hn, "missing log header"));
    }
    let num = |s: Option<&str>, line: usize| -> Result<f64> {
        s.ok_or_else(|| bad(line, "truncated line"))?
            .parse::<f64>()
            .map_err(|_| bad(line, "bad number"))
    };
    let beams = num(fields.next(), hn)? as usize;
    let max_range = num(fields.next(), hn)?;
    let bearings: Vec<f64> = fields.map(|f| num(Some(f), hn)).collect::<Result<_>>()?;
    if bearings.len() != beams {
        return Err(bad(hn, "bearing count does not match header"));
    }
    let mut records = Vec::new();
    for (n, line) in lines {
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|f| num(Some(f), n))
            .collect::<Result<_>>()?;
        if v.len() != 4 + beams + 3 {
            return Err(bad(n, "wrong field count"));
        }
        let scan = ScanObservation::new(bearings.clone(), v[4..4 + beams].to_vec(), max_range)
            .map_err(|e| bad(n, &e.to_string()))?;
        records.push(StepRecord {
            t: v[0] as usize,
            control: OdometryControl::new(v[1], v[2], v[3]),
            scan,
            truth: Pose::new(v[4 + beams], v[5 + beams], v[6 + beams]),
        });
    }
    Ok(records)
}

pub fn load_log(path: impl AsRef<Path>) -> Result<Vec<StepRecord>> {
    log_from_text(&std::fs::read_to_string(path)?)
}

pub fn save_log(records: &[StepRecord], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, log_to_text(records)?)?;
    Ok(())
}

/// A map together with its rotational symmetry about the map centre.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub map: Arc<OccupancyGrid>,
    /// Order of the rotation group; 1 for asymmetric maps.
    pub symmetry: usize,
}

impl Scenario {
    /// The poses indistinguishable from `truth`.
    pub fn ghost_poses(&self, truth: &Pose) -> Vec<Pose> {
        let (cx, cy) = self.map.center();
        (0..self.symmetry.max(1))
            .map(|k| truth.rotated_about(cx, cy, std::f64::consts::TAU * k as f64 / self.symmetry as f64))
            .collect()
    }
}

/// Benchmark maps and their canonical start/goal pairs.
pub mod benchmark {
    use super::*;
    use crate::world::{build_asymmetric_room, build_symmetric_map};

    pub const SIDE: f64 = 15.0;
    pub const ROOMS: usize = 2;
    pub const DOOR: f64 = 1.0;
    pub const RESOLUTION: f64 = 0.1;
    /// Distance of goal corners from the room walls.
    pub const CORNER_INSET: f64 = 1.0;

    pub fn symmetric() -> Result<Scenario> {
        Ok(Scenario {
            map: Arc::new(build_symmetric_map(SIDE, ROOMS, DOOR, RESOLUTION)?),
            symmetry: 4,
        })
    }

    pub fn unimodal() -> Result<Scenario> {
        Ok(Scenario {
            map: Arc::new(build_asymmetric_room(10.0, RESOLUTION)?),
            symmetry: 1,
        })
    }

    /// Rooms counted counter-clockwise from the lower left.
    pub fn room_origin(room: usize) -> (f64, f64) {
        let size = SIDE / ROOMS as f64;
        match room % 4 {
            0 => (0.0, 0.0),
            1 => (size, 0.0),
            2 => (size, size),
            _ => (0.0, size),
        }
    }

    pub fn room_center(room: usize) -> (f64, f64) {
        let (x, y) = room_origin(room);
        let half = SIDE / ROOMS as f64 / 2.0;
        (x + half, y + half)
    }

    /// The corner of `room` farthest from the map centre.
    pub fn far_corner(room: usize) -> (f64, f64) {
        let (x, y) = room_origin(room);
        let size = SIDE / ROOMS as f64;
        let (cx, cy) = (SIDE / 2.0, SIDE / 2.0);
        let px = if x + size / 2.0 < cx {
            x + CORNER_INSET
        } else {
            x + size - CORNER_INSET
        };
        let py = if y + size / 2.0 < cy {
            y + CORNER_INSET
        } else {
            y + size - CORNER_INSET
        };
        (px, py)
    }

    /// A loop inside room 0 between its centre and two of its corners,
    /// repeated until the log has at least `min_steps` controls.
    pub fn patrol_log(scenario: &Scenario, config: &Config, seed: u64, min_steps: usize) -> Result<Vec<StepRecord>> {
        let (cx, cy) = room_center(0);
        let (fx, fy) = far_corner(0);
        let corners = [(fx, fy), (cx, cy), (fx, 2.0 * cy - fy), (cx, cy)];
        let bearings = default_bearings(config.beams);
        let mut goals = Vec::new();
        let mut log = Vec::new();
        while log.len() <= min_steps {
            goals.extend_from_slice(&corners);
            log = generate_route_log(
                &scenario.map,
                Pose::new(cx, cy, 0.3),
                &goals,
                &config.noise,
                config.step_len,
                &bearings,
                config.max_range,
                &mut seeded(seed.wrapping_mul(31).wrapping_add(200)),
            )?;
        }
        Ok(log)
    }

    /// One log per room: start at the room centre, drive to the far corner
    /// of the next room.
    pub fn symmetric_logs(scenario: &Scenario, config: &Config, seed: u64) -> Result<Vec<Vec<StepRecord>>> {
        let bearings = default_bearings(config.beams);
        (0..4)
            .map(|room| {
                let (sx, sy) = room_center(room);
                let (gx, gy) = far_corner(room + 1);
                let mut rng = seeded(seed.wrapping_mul(31).wrapping_add(room as u64));
                let heading = 0.5 * std::f64::consts::FRAC_PI_2 * room as f64 + 0.3;
                generate_log(
                    &scenario.map,
                    Pose::new(sx, sy, heading),
                    Pose::new(gx, gy, 0.0),
                    &config.noise,
                    config.step_len,
                    &bearings,
                    config.max_range,
                    &mut rng,
                )
            })
            .collect()
    }

    /// Logs across the asymmetric room between fixed start/goal pairs.
    pub fn unimodal_logs(scenario: &Scenario, config: &Config, seed: u64) -> Result<Vec<Vec<StepRecord>>> {
        let bearings = default_bearings(config.beams);
        let pairs = [((2.0, 4.0, 0.7), (8.5, 8.5)), ((5.0, 5.0, -2.5), (8.5, 1.5))];
        pairs
            .iter()
            .enumerate()
            .map(|(k, &((sx, sy, st), (gx, gy)))| {
                let mut rng = seeded(seed.wrapping_mul(31).wrapping_add(100 + k as u64));
                generate_log(
                    &scenario.map,
                    Pose::new(sx, sy, st),
                    Pose::new(gx, gy, 0.0),
                    &config.noise,
                    config.step_len,
                    &bearings,
                    config.max_range,
                    &mut rng,
                )
            })
            .collect()
    }
}

/// Outcome of one filter run on one log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub variant: Variant,
    pub seed: u64,
    pub log_index: usize,
    /// Position error of the reported pose, per step.
    pub errors: Vec<f64>,
    pub samples: Vec<usize>,
    pub resources: Vec<f64>,
    pub species: Vec<usize>,
    /// Whether a hypothesis matched the truth, per step.
    pub alive: Vec<bool>,
    /// How many of the symmetric modes (truth and its ghosts) a hypothesis matched, per step.
    pub modes: Vec<usize>,
    pub converged_step: Option<usize>,
    /// First step the matching hypothesis was lost; `None` means never.
    pub expired_step: Option<usize>,
    /// First step from convergence (or, failing that, from first full
    /// coverage) at which a mode had no hypothesis; `None` means all were
    /// kept to the end.
    pub modes_lost_step: Option<usize>,
    pub success: bool,
    /// Step at which every species died out, if that happened.
    pub diverged_at: Option<usize>,
    pub stats: Vec<StepStats>,
    /// Wall-clock seconds per step; excluded from determinism checks.
    pub step_seconds: Vec<f64>,
}

impl RunMetrics {
    /// Copy without wall-clock fields.
    pub fn without_timing(&self) -> Self {
        Self {
            step_seconds: Vec::new(),
            ..self.clone()
        }
    }

    pub fn mean_samples(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            self.samples.iter().sum::<usize>() as f64 / self.samples.len() as f64
        }
    }
}

/// Weighted mean (x, y) of each 4-connected grid cluster holding at least
/// `min_size` samples.
pub fn cluster_means(samples: &SampleSet, grid: &GridSpec, min_size: usize) -> Vec<(f64, f64)> {
    let cells: Vec<usize> = samples.iter().map(|s| grid.index_clamped(s.pose.x, s.pose.y)).collect();
    let mut occupied = vec![false; grid.len()];
    for &c in &cells {
        occupied[c] = true;
    }
    let (labels, n) = connected_regions(grid, &occupied);
    let mut acc = vec![(0.0, 0.0, 0.0, 0usize); n];
    for (s, &c) in samples.iter().zip(&cells) {
        let a = &mut acc[labels[c] as usize - 1];
        a.0 += s.weight * s.pose.x;
        a.1 += s.weight * s.pose.y;
        a.2 += s.weight;
        a.3 += 1;
    }
    acc.into_iter()
        .filter(|a| a.3 >= min_size && a.2 > 0.0)
        .map(|a| (a.0 / a.2, a.1 / a.2))
        .collect()
}

/// Pose hypotheses a filter currently holds.
pub fn hypotheses(state: &FilterState, grid: &GridSpec) -> Vec<(f64, f64)> {
    match state.variant {
        Variant::Ceamcl => state
            .species
            .iter()
            .map(|s| {
                let m = s.mean_pose();
                (m.x, m.y)
            })
            .collect(),
        _ => cluster_means(&state.species[0].samples, grid, 3),
    }
}

/// Cell size of the grid that groups MCL samples into hypotheses.
pub const HYPOTHESIS_CELL: f64 = 0.5;

fn hypothesis_grid(map: &OccupancyGrid) -> Result<GridSpec> {
    let nx = (map.width_m() / HYPOTHESIS_CELL).ceil() as usize;
    let ny = (map.height_m() / HYPOTHESIS_CELL).ceil() as usize;
    let (ox, oy) = map.origin();
    GridSpec::new(nx, ny, ox, oy, HYPOTHESIS_CELL, HYPOTHESIS_CELL)
}

fn converged(state: &FilterState, ghosts: &[Pose], radius: f64, mass: f64) -> bool {
    let total = state.total_samples();
    let near = state
        .all_samples()
        .filter(|s| ghosts.iter().any(|g| g.distance_xy(&s.pose) <= radius))
        .count();
    total > 0 && near as f64 >= mass * total as f64
}

/// Runs one variant over one log from `seed`.
pub fn run_single(
    scenario: &Scenario,
    log: &[StepRecord],
    variant: Variant,
    config: &Arc<Config>,
    seed: u64,
    log_index: usize,
) -> Result<RunMetrics> {
    let first = log.first().ok_or(Error::EmptyRequest)?;
    let hgrid = hypothesis_grid(&scenario.map)?;
    let mut m = RunMetrics {
        variant,
        seed,
        log_index,
        errors: Vec::new(),
        samples: Vec::new(),
        resources: Vec::new(),
        species: Vec::new(),
        alive: Vec::new(),
        modes: Vec::new(),
        converged_step: None,
        modes_lost_step: None,
        expired_step: None,
        success: false,
        diverged_at: None,
        stats: Vec::new(),
        step_seconds: Vec::new(),
    };
    let clock = Instant::now();
    let mut state = Some(FilterState::init(
        variant,
        scenario.map.clone(),
        &first.scan,
        config.clone(),
        seeded(seed),
    )?);
    let mut elapsed = clock.elapsed().as_secs_f64();
    for (k, rec) in log.iter().enumerate() {
        if k > 0 {
            let clock = Instant::now();
            match state.take().expect("live state").step(&rec.control, &rec.scan) {
                Ok(s) => state = Some(s),
                Err(Error::AllExtinct(t)) => {
                    m.diverged_at = Some(t);
                    break;
                }
                Err(e) => return Err(e),
            }
            elapsed = clock.elapsed().as_secs_f64();
        }
        let s = state.as_ref().expect("live state");
        record_step(&mut m, s, rec, scenario, &hgrid, config, elapsed);
    }
    let first_alive = m.alive.iter().position(|&a| a);
    m.expired_step = match first_alive {
        None => Some(0),
        Some(f) => match m.alive[f..].iter().position(|&a| !a) {
            Some(off) => Some(f + off),
            None if m.diverged_at.is_some() => Some(m.alive.len()),
            None => None,
        },
    };
    m.success = m.expired_step.is_none() && m.alive.last().copied().unwrap_or(false);
    let omega = scenario.symmetry;
    let first_full = m.modes.iter().position(|&k| k >= omega);
    m.modes_lost_step = match m.converged_step.or(first_full) {
        None => Some(0),
        Some(f) => match m.modes[f..].iter().position(|&k| k < omega) {
            Some(off) => Some(f + off),
            None if m.diverged_at.is_some() => Some(m.modes.len()),
            None => None,
        },
    };
    Ok(m)
}

fn record_step(
    m: &mut RunMetrics,
    s: &FilterState,
    rec: &StepRecord,
    scenario: &Scenario,
    hgrid: &GridSpec,
    config: &Config,
    seconds: f64,
) {
    let t = m.errors.len();
    m.errors.push(s.estimate().distance_xy(&rec.truth));
    m.samples.push(s.total_samples());
    m.resources.push(s.resources);
    m.species.push(s.species.len());
    let radius = config.association_radius;
    let hyps = hypotheses(s, hgrid);
    let matched = |p: &Pose| hyps.iter().any(|&(x, y)| (x - p.x).hypot(y - p.y) <= radius);
    m.alive.push(matched(&rec.truth));
    let ghosts = scenario.ghost_poses(&rec.truth);
    m.modes.push(ghosts.iter().filter(|g| matched(g)).count());
    if m.converged_step.is_none() && converged(s, &ghosts, radius, config.convergence_mass) {
        m.converged_step = Some(t);
    }
    m.stats.push(s.last_stats);
    m.step_seconds.push(seconds);
}

/// Every (log, seed) pair for one variant, in log-major order.
pub fn run_experiment(
    scenario: &Scenario,
    logs: &[Vec<StepRecord>],
    variant: Variant,
    config: &Arc<Config>,
    seeds: &[u64],
) -> Result<Vec<RunMetrics>> {
    let jobs: Vec<(usize, u64)> = (0..logs.len())
        .flat_map(|l| seeds.iter().map(move |&s| (l, s)))
        .collect();
    jobs.par_iter()
        .map(|&(l, s)| run_single(scenario, &logs[l], variant, config, s, l))
        .collect()
}

/// Success and expiry aggregate of one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub runs: usize,
    pub success_rate: f64,
    /// Share of successful runs whose hypothesis never expired.
    pub never_expired_rate: f64,
    /// Share of successful runs that kept a hypothesis on every symmetric mode.
    pub all_modes_kept_rate: f64,
    pub mean_converged_step: Option<f64>,
    pub mean_expired_step: Option<f64>,
    pub mean_error: f64,
    pub mean_samples: f64,
}

pub fn summarize_runs(variant: Variant, runs: &[RunMetrics]) -> VariantSummary {
    let n = runs.len().max(1) as f64;
    let ok: Vec<&RunMetrics> = runs.iter().filter(|r| r.success).collect();
    let mean_opt = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let final_errors: Vec<f64> = runs.iter().filter_map(|r| r.errors.last().copied()).collect();
    VariantSummary {
        variant,
        runs: runs.len(),
        success_rate: ok.len() as f64 / n,
        never_expired_rate: if ok.is_empty() {
            0.0
        } else {
            ok.iter().filter(|r| r.expired_step.is_none()).count() as f64 / ok.len() as f64
        },
        all_modes_kept_rate: if ok.is_empty() {
            0.0
        } else {
            ok.iter().filter(|r| r.modes_lost_step.is_none()).count() as f64 / ok.len() as f64
        },
        mean_converged_step: mean_opt(runs.iter().filter_map(|r| r.converged_step.map(|c| c as f64)).collect()),
        mean_expired_step: mean_opt(runs.iter().filter_map(|r| r.expired_step.map(|c| c as f64)).collect()),
        mean_error: mean_opt(final_errors).unwrap_or(0.0),
        mean_samples: runs.iter().map(|r| r.mean_samples()).sum::<f64>() / n,
    }
}

pub const STEP_CSV_HEADER: &str = "variant,seed,log,t,error,samples,species,resources,alive,modes,seconds";

pub fn steps_csv(runs: &[RunMetrics], with_timing: bool) -> String {
    let mut out = String::from(STEP_CSV_HEADER);
    out.push('\n');
    for r in runs {
        for t in 0..r.errors.len() {
            let secs = if with_timing {
                format!("{}", r.step_seconds[t])
            } else {
                String::new()
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.variant,
                r.seed,
                r.log_index,
                t,
                r.errors[t],
                r.samples[t],
                r.species[t],
                r.resources[t],
                u8::from(r.alive[t]),
                r.modes[t],
                secs
            );
        }
    }
    out
}

pub const SUMMARY_CSV_HEADER: &str =
    "variant,runs,success_rate,never_expired_rate,all_modes_kept_rate,mean_converged_step,mean_expired_step,mean_error,mean_samples";

pub fn summary_csv(rows: &[VariantSummary]) -> String {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_else(|| "never".into());
    let mut out = String::from(SUMMARY_CSV_HEADER);
    out.push('\n');
    for s in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            s.variant,
            s.runs,
            s.success_rate,
            s.never_expired_rate,
            s.all_modes_kept_rate,
            opt(s.mean_converged_step),
            opt(s.mean_expired_step),
            s.mean_error,
            s.mean_samples
        );
    }
    out
}

/// Mean total-sample curve for one value of a swept parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub param: String,
    pub value: f64,
    pub mean_samples: Vec<f64>,
    /// Mean over the second half of the curve.
    pub steady_state: f64,
    /// Equilibrium total predicted from the final dynamics, mean over runs.
    pub predicted_equilibrium: f64,
    pub diverged_runs: usize,
}

/// Population total at the stable fixed point of the competition: the
/// species maximizing `w̄·K` excludes the rest and settles at its `K`.
pub fn lv_equilibrium_total(fitness: &[f64], capacities: &[f64]) -> f64 {
    fitness
        .iter()
        .zip(capacities)
        .max_by(|a, b| (a.0 * a.1).total_cmp(&(b.0 * b.1)))
        .map(|(_, &k)| k)
        .unwrap_or(0.0)
}

fn tail_mean(v: &[f64]) -> f64 {
    let tail = &v[v.len() / 2..];
    if tail.is_empty() {
        0.0
    } else {
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

/// CEAMCL sample-size curves, one per value of config key `param`.
pub fn sweep_param(
    scenario: &Scenario,
    log: &[StepRecord],
    param: &str,
    values: &[f64],
    config: &Config,
    seeds: &[u64],
) -> Result<Vec<SweepCurve>> {
    if log.is_empty() {
        return Err(Error::EmptyRequest);
    }
    values
        .iter()
        .map(|&value| {
            let mut c = config.clone();
            c.set(param, &value.to_string())?;
            c.validate()?;
            let c = Arc::new(c);
            let runs: Vec<(Vec<usize>, f64, bool)> = seeds
                .par_iter()
                .map(|&seed| sweep_run(scenario, log, &c, seed))
                .collect::<Result<_>>()?;
            let mut mean = vec![0.0; log.len()];
            for (samples, _, _) in &runs {
                for (m, &s) in mean.iter_mut().zip(samples) {
                    *m += s as f64 / runs.len() as f64;
                }
            }
            let diverged_runs = runs.iter().filter(|r| r.2).count();
            Ok(SweepCurve {
                param: param.to_string(),
                value,
                steady_state: tail_mean(&mean),
                predicted_equilibrium: runs.iter().map(|r| r.1).sum::<f64>() / runs.len().max(1) as f64,
                mean_samples: mean,
                diverged_runs,
            })
        })
        .collect()
}

/// [`sweep_param`] over the resource density `δ`.
pub fn sweep_delta(
    scenario: &Scenario,
    log: &[StepRecord],
    deltas: &[f64],
    config: &Config,
    seeds: &[u64],
) -> Result<Vec<SweepCurve>> {
    sweep_param(scenario, log, "delta", deltas, config, seeds)
}

pub const SWEEP_CSV_HEADER: &str = "param,value,t,mean_samples";

/// Long-form curves: one row per value and step.
pub fn sweep_csv(curves: &[SweepCurve]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for c in curves {
        for (t, m) in c.mean_samples.iter().enumerate() {
            let _ = writeln!(out, "{},{},{},{}", c.param, c.value, t, m);
        }
    }
    out
}

fn sweep_run(
    scenario: &Scenario,
    log: &[StepRecord],
    config: &Arc<Config>,
    seed: u64,
) -> Result<(Vec<usize>, f64, bool)> {
    let first = log.first().ok_or(Error::EmptyRequest)?;
    let mut state = FilterState::init(
        Variant::Ceamcl,
        scenario.map.clone(),
        &first.scan,
        config.clone(),
        seeded(seed),
    )?;
    let mut samples = vec![state.total_samples()];
    for rec in &log[1..] {
        match state.step(&rec.control, &rec.scan) {
            Ok(s) => state = s,
            Err(Error::AllExtinct(_)) => {
                samples.resize(log.len(), 0);
                return Ok((samples, 0.0, true));
            }
            Err(e) => return Err(e),
        }
        samples.push(state.total_samples());
    }
    let fitness: Vec<f64> = state.species.iter().map(|s| s.fitness).collect();
    let caps: Vec<f64> = state.species.iter().map(|s| s.capacity).collect();
    Ok((samples, lv_equilibrium_total(&fitness, &caps), false))
}

/// Timing comparison of CEAMCL against MCL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub mcl_seconds: Vec<f64>,
    pub ceamcl_seconds: Vec<f64>,
    pub mcl_samples: usize,
    pub ceamcl_mean_samples: f64,
    pub fitted: CostModel,
    /// Measured per-sample time ratio CEAMCL / MCL.
    pub measured_ratio: f64,
    /// Prediction at equal sample counts.
    pub predicted: CostRatio,
}

struct Timed {
    seconds: f64,
    stats: StepStats,
    samples: usize,
}

fn timed_run(
    scenario: &Scenario,
    log: &[StepRecord],
    variant: Variant,
    config: &Arc<Config>,
    seed: u64,
) -> Result<Vec<Timed>> {
    let Some(first) = log.first() else {
        return Ok(Vec::new());
    };
    let mut state = FilterState::init(variant, scenario.map.clone(), &first.scan, config.clone(), seeded(seed))?;
    let mut out = Vec::new();
    for rec in &log[1..] {
        let n_in = state.total_samples();
        let clock = Instant::now();
        state = match state.step(&rec.control, &rec.scan) {
            Ok(s) => s,
            Err(Error::AllExtinct(_)) => break,
            Err(e) => return Err(e),
        };
        let seconds = clock.elapsed().as_secs_f64();
        out.push(Timed {
            seconds,
            stats: state.last_stats,
            samples: n_in.max(state.last_stats.resampled),
        });
    }
    Ok(out)
}

/// Least-squares per-unit costs from step counters: columns are
/// likelihood evaluations, motion and operator draws, and resampled
/// samples.
pub fn fit_cost_model(rows: &[(StepStats, f64)], p: f64) -> CostModel {
    if rows.is_empty() {
        return CostModel {
            t_f: 0.0,
            t_s: 0.0,
            t_r: 0.0,
            t_m: 0.0,
            p,
        };
    }
    let a = DMatrix::from_fn(rows.len(), 3, |i, j| {
        let s = &rows[i].0;
        match j {
            0 => s.likelihood_evals() as f64,
            1 => (s.propagated + s.evolution_trials) as f64,
            _ => s.resampled as f64,
        }
    });
    let b = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1));
    let x = a.svd(true, true).solve(&b, 1e-9).unwrap_or_else(|_| DVector::zeros(3));
    CostModel {
        t_f: x[0].max(0.0),
        t_s: x[1].max(0.0),
        t_r: x[2].max(0.0),
        t_m: 0.0,
        p,
    }
}

/// Times MCL and CEAMCL on `log` in a single-threaded pool, plus a GMCL
/// calibration run for the fit. MCL runs with
/// the CEAMCL mean sample count so per-iteration times compare at equal N.
pub fn measure_cost(scenario: &Scenario, log: &[StepRecord], config: &Config, seeds: &[u64]) -> Result<CostReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    pool.install(|| {
        let p = config.evolution.p_c + config.evolution.p_m;
        let cea_cfg = Arc::new(config.clone());
        let mut cea = Vec::new();
        for &s in seeds {
            cea.extend(timed_run(scenario, log, Variant::Ceamcl, &cea_cfg, s)?);
        }
        let n_c = if cea.is_empty() {
            0.0
        } else {
            cea.iter().map(|t| t.samples as f64).sum::<f64>() / cea.len() as f64
        };
        let mut mcl_cfg = config.clone();
        mcl_cfg.fixed_n = (n_c.round() as usize).max(1);
        let mcl_cfg = Arc::new(mcl_cfg);
        let mut mcl = Vec::new();
        for &s in seeds {
            mcl.extend(timed_run(scenario, log, Variant::Mcl, &mcl_cfg, s)?);
        }
        let per_sample = |v: &[Timed]| -> f64 {
            let secs: f64 = v.iter().map(|t| t.seconds).sum();
            let n: usize = v.iter().map(|t| t.samples).sum();
            if n == 0 {
                0.0
            } else {
                secs / n as f64
            }
        };
        let mcl_ps = per_sample(&mcl);
        let measured_ratio = if mcl_ps > 0.0 { per_sample(&cea) / mcl_ps } else { 0.0 };
        // a half-rate mutation-only GMCL run separates per-evaluation from
        // per-draw costs, which the other two variants alone leave collinear
        let mut cal_cfg = (*mcl_cfg).clone();
        cal_cfg.evolution.p_c = 0.0;
        cal_cfg.evolution.p_m = 0.5;
        let cal_cfg = Arc::new(cal_cfg);
        let mut cal = Vec::new();
        for &s in seeds {
            cal.extend(timed_run(scenario, log, Variant::Gmcl, &cal_cfg, s)?);
        }
        let rows: Vec<(StepStats, f64)> = cea
            .iter()
            .chain(&mcl)
            .chain(&cal)
            .map(|t| (t.stats, t.seconds))
            .collect();
        let fitted = fit_cost_model(&rows, p);
        let predicted = if fitted.mcl_time(1) > 0.0 {
            predict_cost_ratio(&fitted, mcl_cfg.fixed_n, mcl_cfg.fixed_n)?
        } else {
            CostRatio {
                exact: 0.0,
                approx: 1.0 + p,
            }
        };
        Ok(CostReport {
            mcl_seconds: mcl.iter().map(|t| t.seconds).collect(),
            ceamcl_seconds: cea.iter().map(|t| t.seconds).collect(),
            mcl_samples: mcl_cfg.fixed_n,
            ceamcl_mean_samples: n_c,
            fitted,
            measured_ratio,
            predicted,
        })
    })
}
