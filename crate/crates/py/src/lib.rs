//! Python bindings: maps, logs, configs, the three filters and the
//! competition helpers.

use std::sync::Arc;

use ceamcl::coevolution;
use ceamcl::config::Config;
use ceamcl::driver::{FilterState, Variant};
use ceamcl::error::Error;
use ceamcl::harness::{self, Scenario, StepRecord};
use ceamcl::models::{self, default_bearings, OdometryControl, ScanObservation};
use ceamcl::rng::seeded;
use ceamcl::world::{self, OccupancyGrid, Pose};
use pyo3::exceptions::{PyIndexError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn variant(name: &str) -> PyResult<Variant> {
    name.parse()
        .map_err(|_| PyValueError::new_err(format!("unknown variant {name:?}")))
}

#[pyclass(name = "Pose", module = "pyceamcl", from_py_object)]
#[derive(Clone, Copy)]
struct PyPose {
    inner: Pose,
}

#[pymethods]
impl PyPose {
    #[new]
    fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            inner: Pose::new(x, y, theta),
        }
    }

    #[getter]
    fn x(&self) -> f64 {
        self.inner.x
    }

    #[getter]
    fn y(&self) -> f64 {
        self.inner.y
    }

    /// Heading in (-pi, pi].
    #[getter]
    fn theta(&self) -> f64 {
        self.inner.theta
    }

    /// Planar distance, ignoring heading.
    fn distance(&self, other: &PyPose) -> f64 {
        self.inner.distance_xy(&other.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "Pose({:.4}, {:.4}, {:.4})",
            self.inner.x, self.inner.y, self.inner.theta
        )
    }
}

impl From<Pose> for PyPose {
    fn from(inner: Pose) -> Self {
        Self { inner }
    }
}

/// Occupancy grid; cells are either free or occupied.
#[pyclass(name = "Map", module = "pyceamcl")]
struct PyMap {
    inner: Arc<OccupancyGrid>,
}

impl PyMap {
    fn wrap(g: OccupancyGrid) -> Self {
        Self { inner: Arc::new(g) }
    }
}

#[pymethods]
impl PyMap {
    /// Square building split into `rooms` x `rooms` rooms joined by doors.
    #[staticmethod]
    #[pyo3(signature = (side=15.0, rooms=2, door=1.0, resolution=0.1))]
    fn symmetric(side: f64, rooms: usize, door: f64, resolution: f64) -> PyResult<Self> {
        world::build_symmetric_map(side, rooms, door, resolution)
            .map(Self::wrap)
            .map_err(to_py)
    }

    #[staticmethod]
    #[pyo3(signature = (side=10.0, resolution=0.1))]
    fn asymmetric(side: f64, resolution: f64) -> PyResult<Self> {
        world::build_asymmetric_room(side, resolution)
            .map(Self::wrap)
            .map_err(to_py)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        OccupancyGrid::load(path).map(Self::wrap).map_err(to_py)
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        OccupancyGrid::from_text(text).map(Self::wrap).map_err(to_py)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn resolution(&self) -> f64 {
        self.inner.resolution()
    }

    #[getter]
    fn origin(&self) -> (f64, f64) {
        self.inner.origin()
    }

    fn is_free(&self, x: f64, y: f64) -> bool {
        self.inner.is_free(x, y)
    }

    fn free_cell_count(&self) -> usize {
        self.inner.free_cell_count()
    }

    /// Distance to the first occupied cell along `bearing`, capped at `max_range`.
    fn raycast(&self, pose: &PyPose, bearing: f64, max_range: f64) -> PyResult<f64> {
        self.inner.raycast(&pose.inner, bearing, max_range).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Map({}x{} @ {} m)",
            self.inner.width(),
            self.inner.height(),
            self.inner.resolution()
        )
    }
}

/// Filter and experiment parameters, addressed by key.
#[pyclass(name = "Config", module = "pyceamcl", skip_from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: Config,
}

#[pymethods]
impl PyConfig {
    /// Defaults, then each keyword as an override.
    #[new]
    #[pyo3(signature = (**overrides))]
    fn new(overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut c = Self {
            inner: Config::default(),
        };
        if let Some(d) = overrides {
            for (k, v) in d.iter() {
                c.set(&k.extract::<String>()?, &v)?;
            }
        }
        Ok(c)
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        Config::from_text(text).map(|inner| Self { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Config::load(path).map(|inner| Self { inner }).map_err(to_py)
    }

    #[staticmethod]
    fn keys() -> Vec<&'static str> {
        ceamcl::config::KEYS.to_vec()
    }

    fn get(&self, key: &str) -> PyResult<String> {
        self.inner.get(key).map_err(to_py)
    }

    /// Accepts anything whose `str()` parses; `seeds` also takes a list.
    fn set(&mut self, key: &str, value: &Bound<'_, PyAny>) -> PyResult<()> {
        let text = if let Ok(seeds) = value.extract::<Vec<u64>>() {
            seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
        } else {
            value.str()?.to_string()
        };
        self.inner.set(key, &text).map_err(to_py)?;
        self.inner.validate().map_err(to_py)
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(fixed_n={}, delta={})",
            self.inner.fixed_n, self.inner.dynamics.delta
        )
    }
}

fn config_or_default(config: Option<&PyConfig>) -> Arc<Config> {
    Arc::new(config.map(|c| c.inner.clone()).unwrap_or_default())
}

/// One range scan.
#[pyclass(name = "Scan", module = "pyceamcl", skip_from_py_object)]
#[derive(Clone)]
struct PyScan {
    inner: ScanObservation,
}

#[pymethods]
impl PyScan {
    #[new]
    fn new(bearings: Vec<f64>, ranges: Vec<f64>, max_range: f64) -> PyResult<Self> {
        ScanObservation::new(bearings, ranges, max_range)
            .map(|inner| Self { inner })
            .map_err(to_py)
    }

    /// Noise-free scan from `pose` with the config's beam layout.
    #[staticmethod]
    #[pyo3(signature = (map, pose, config=None))]
    fn simulate(map: &PyMap, pose: &PyPose, config: Option<&PyConfig>) -> Self {
        let c = config_or_default(config);
        Self {
            inner: ScanObservation::simulate(&map.inner, &pose.inner, &default_bearings(c.beams), c.max_range),
        }
    }

    #[getter]
    fn bearings(&self) -> Vec<f64> {
        self.inner.bearings.clone()
    }

    #[getter]
    fn ranges(&self) -> Vec<f64> {
        self.inner.ranges.clone()
    }

    #[getter]
    fn max_range(&self) -> f64 {
        self.inner.max_range
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Recorded run: ground truth, odometry and scans per step.
#[pyclass(name = "Log", module = "pyceamcl", skip_from_py_object)]
#[derive(Clone)]
struct PyLog {
    records: Vec<StepRecord>,
}

impl PyLog {
    fn record(&self, i: usize) -> PyResult<&StepRecord> {
        self.records
            .get(i)
            .ok_or_else(|| PyIndexError::new_err(format!("step {i} out of range")))
    }
}

#[pymethods]
impl PyLog {
    /// Drives a simulated robot from `start` through each goal in turn.
    #[staticmethod]
    #[pyo3(signature = (map, start, goals, config=None, seed=0))]
    fn generate(
        map: &PyMap,
        start: &PyPose,
        goals: Vec<(f64, f64)>,
        config: Option<&PyConfig>,
        seed: u64,
    ) -> PyResult<Self> {
        let c = config_or_default(config);
        harness::generate_route_log(
            &map.inner,
            start.inner,
            &goals,
            &c.noise,
            c.step_len,
            &default_bearings(c.beams),
            c.max_range,
            &mut seeded(seed),
        )
        .map(|records| Self { records })
        .map_err(to_py)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        harness::load_log(path).map(|records| Self { records }).map_err(to_py)
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        harness::log_from_text(text)
            .map(|records| Self { records })
            .map_err(to_py)
    }

    fn to_text(&self) -> PyResult<String> {
        harness::log_to_text(&self.records).map_err(to_py)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        harness::save_log(&self.records, path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.records.len()
    }

    fn truth(&self, i: usize) -> PyResult<PyPose> {
        Ok(self.record(i)?.truth.into())
    }

    fn scan(&self, i: usize) -> PyResult<PyScan> {
        Ok(PyScan {
            inner: self.record(i)?.scan.clone(),
        })
    }

    /// `(delta_rot1, delta_trans, delta_rot2)` leading into step `i`.
    fn control(&self, i: usize) -> PyResult<(f64, f64, f64)> {
        let u = self.record(i)?.control;
        Ok((u.delta_rot1, u.delta_trans, u.delta_rot2))
    }
}

/// A running MCL, GMCL or CEAMCL filter.
#[pyclass(name = "Filter", module = "pyceamcl")]
struct PyFilter {
    state: Option<FilterState>,
}

impl PyFilter {
    fn state(&self) -> PyResult<&FilterState> {
        self.state
            .as_ref()
            .ok_or_else(|| PyRuntimeError::new_err("filter was lost after a failed step"))
    }
}

#[pymethods]
impl PyFilter {
    #[new]
    #[pyo3(signature = (variant, map, scan, config=None, seed=0))]
    fn new(variant: &str, map: &PyMap, scan: &PyScan, config: Option<&PyConfig>, seed: u64) -> PyResult<Self> {
        let v = self::variant(variant)?;
        let state = FilterState::init(
            v,
            map.inner.clone(),
            &scan.inner,
            config_or_default(config),
            seeded(seed),
        )
        .map_err(to_py)?;
        Ok(Self { state: Some(state) })
    }

    fn step(&mut self, py: Python<'_>, control: (f64, f64, f64), scan: &PyScan) -> PyResult<()> {
        let state = self
            .state
            .take()
            .ok_or_else(|| PyRuntimeError::new_err("filter was lost after a failed step"))?;
        let u = OdometryControl::new(control.0, control.1, control.2);
        let y = scan.inner.clone();
        let next = py.detach(move || state.step(&u, &y)).map_err(to_py)?;
        self.state = Some(next);
        Ok(())
    }

    fn estimate(&self) -> PyResult<PyPose> {
        Ok(self.state()?.estimate().into())
    }

    #[getter]
    fn t(&self) -> PyResult<usize> {
        Ok(self.state()?.t)
    }

    #[getter]
    fn variant(&self) -> PyResult<&'static str> {
        Ok(self.state()?.variant.as_str())
    }

    #[getter]
    fn total_samples(&self) -> PyResult<usize> {
        Ok(self.state()?.total_samples())
    }

    #[getter]
    fn resources(&self) -> PyResult<f64> {
        Ok(self.state()?.resources)
    }

    /// One dict per species: id, size, population, fitness, growth_rate, capacity.
    fn species<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.state()?
            .species
            .iter()
            .map(|sp| {
                let d = PyDict::new(py);
                d.set_item("id", sp.id)?;
                d.set_item("size", sp.samples.len())?;
                d.set_item("population", sp.population)?;
                d.set_item("fitness", sp.fitness)?;
                d.set_item("growth_rate", sp.growth_rate)?;
                d.set_item("capacity", sp.capacity)?;
                Ok(d)
            })
            .collect()
    }

    /// Every sample as `(x, y, theta, weight)`.
    fn samples(&self) -> PyResult<Vec<(f64, f64, f64, f64)>> {
        Ok(self
            .state()?
            .all_samples()
            .map(|s| (s.pose.x, s.pose.y, s.pose.theta, s.weight))
            .collect())
    }
}

/// Runs one variant over a log and returns its per-step metrics.
#[pyfunction]
#[pyo3(signature = (variant, map, log, config=None, seed=0, symmetry=1))]
fn run<'py>(
    py: Python<'py>,
    variant: &str,
    map: &PyMap,
    log: &PyLog,
    config: Option<&PyConfig>,
    seed: u64,
    symmetry: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let v = self::variant(variant)?;
    let scenario = Scenario {
        map: map.inner.clone(),
        symmetry,
    };
    let config = config_or_default(config);
    let records = &log.records;
    let m = py
        .detach(|| harness::run_single(&scenario, records, v, &config, seed, 0))
        .map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("variant", v.as_str())?;
    d.set_item("seed", m.seed)?;
    d.set_item("errors", &m.errors)?;
    d.set_item("samples", &m.samples)?;
    d.set_item("species", &m.species)?;
    d.set_item("resources", &m.resources)?;
    d.set_item("alive", &m.alive)?;
    d.set_item("modes", &m.modes)?;
    d.set_item("modes_lost_step", m.modes_lost_step)?;
    d.set_item("success", m.success)?;
    d.set_item("converged_step", m.converged_step)?;
    d.set_item("expired_step", m.expired_step)?;
    d.set_item("diverged_at", m.diverged_at)?;
    d.set_item("mean_samples", m.mean_samples())?;
    Ok(d)
}

/// Beam-model likelihood of `scan` taken from `pose`.
#[pyfunction]
#[pyo3(signature = (scan, pose, map, config=None))]
fn likelihood(scan: &PyScan, pose: &PyPose, map: &PyMap, config: Option<&PyConfig>) -> PyResult<f64> {
    let c = config_or_default(config);
    models::likelihood(&scan.inner, &pose.inner, &map.inner, &c.noise).map_err(to_py)
}

/// Pairwise competition coefficients from species fitness.
#[pyfunction]
fn competition_matrix(fitness: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
    coevolution::competition_matrix(&fitness).map_err(to_py)
}

#[pyfunction]
fn carrying_capacity(fitness: f64, total_resources: f64) -> f64 {
    coevolution::carrying_capacity(fitness, total_resources)
}

/// Net growth per species for one step of the competition dynamics.
#[pyfunction]
#[pyo3(signature = (populations, capacities, alpha, r=0.2))]
fn growth_rates(populations: Vec<f64>, capacities: Vec<f64>, alpha: Vec<Vec<f64>>, r: f64) -> PyResult<Vec<f64>> {
    let n = populations.len();
    if capacities.len() != n || alpha.len() != n || alpha.iter().any(|row| row.len() != n) {
        return Err(PyValueError::new_err(
            "populations, capacities and alpha disagree in size",
        ));
    }
    Ok(coevolution::growth_rates(&populations, &capacities, &alpha, r))
}

/// Two-species outcome as `(name, degenerate)`.
#[pyfunction]
fn classify_equilibrium(k1: f64, k2: f64, alpha12: f64, alpha21: f64) -> PyResult<(String, bool)> {
    let c = coevolution::classify_equilibrium(k1, k2, alpha12, alpha21).map_err(to_py)?;
    let name = match c.outcome {
        coevolution::Equilibrium::Species1Wins => "species1_wins",
        coevolution::Equilibrium::Species2Wins => "species2_wins",
        coevolution::Equilibrium::Bistable => "bistable",
        coevolution::Equilibrium::Coexist => "coexist",
    };
    Ok((name.to_string(), c.degenerate))
}

#[pymodule]
fn pyceamcl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("VARIANTS", Variant::ALL.iter().map(|v| v.as_str()).collect::<Vec<_>>())?;
    m.add_class::<PyPose>()?;
    m.add_class::<PyMap>()?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyScan>()?;
    m.add_class::<PyLog>()?;
    m.add_class::<PyFilter>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(likelihood, m)?)?;
    m.add_function(wrap_pyfunction!(competition_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(carrying_capacity, m)?)?;
    m.add_function(wrap_pyfunction!(growth_rates, m)?)?;
    m.add_function(wrap_pyfunction!(classify_equilibrium, m)?)?;
    Ok(())
}
