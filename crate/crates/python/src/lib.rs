//! Python bindings for the pbbsim simulator.

use std::time::Duration;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use pbbsim::config::{emit_scenario, parse_scenario, ScenarioFile};
use pbbsim::metrics::{self, series_csv, MetricsFrame};
use pbbsim::{oracle, Preset, SimConfig};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Simulation configuration. Attribute names follow the scenario file keys
/// with underscores; `cache` is "off", "unbounded" or "lru:N".
#[pyclass(name = "Config", module = "pbbsim_py", skip_from_py_object)]
#[derive(Clone)]
pub struct PyConfig {
    #[pyo3(get, set)]
    entities: u32,
    #[pyo3(get, set)]
    steps: u32,
    #[pyo3(get, set)]
    seed: u64,
    #[pyo3(get, set)]
    workers: usize,
    #[pyo3(get, set)]
    adaptive: bool,
    #[pyo3(get, set)]
    cache: String,
    #[pyo3(get, set)]
    density: f64,
    #[pyo3(get, set)]
    static_fraction: f64,
    #[pyo3(get, set)]
    speed_min: f64,
    #[pyo3(get, set)]
    speed_max: f64,
    #[pyo3(get, set)]
    interaction_range: f64,
    #[pyo3(get, set)]
    forwarding_range: f64,
    #[pyo3(get, set)]
    cell_size: Option<f64>,
    #[pyo3(get, set)]
    ttl: u32,
    #[pyo3(get, set)]
    dissemination_probability: f64,
    #[pyo3(get, set)]
    generation_probability: f64,
    #[pyo3(get, set)]
    migration_window: u32,
    #[pyo3(get, set)]
    migration_period: u32,
    #[pyo3(get, set)]
    migration_threshold: f64,
    #[pyo3(get, set)]
    migration_max: Option<u32>,
}

impl From<&SimConfig> for PyConfig {
    fn from(c: &SimConfig) -> Self {
        let f = ScenarioFile::from(c);
        Self {
            entities: f.entities,
            steps: f.steps,
            seed: f.seed,
            workers: f.workers,
            adaptive: f.adaptive,
            cache: f.cache.to_string(),
            density: f.density,
            static_fraction: f.static_fraction,
            speed_min: f.speed_min,
            speed_max: f.speed_max,
            interaction_range: f.interaction_range,
            forwarding_range: f.forwarding_range,
            cell_size: f.cell_size,
            ttl: f.ttl,
            dissemination_probability: f.dissemination_probability,
            generation_probability: f.generation_probability,
            migration_window: f.migration_window,
            migration_period: f.migration_period,
            migration_threshold: f.migration_threshold,
            migration_max: f.migration_max,
        }
    }
}

impl PyConfig {
    fn to_sim(&self) -> PyResult<SimConfig> {
        let file = ScenarioFile {
            entities: self.entities,
            steps: self.steps,
            seed: self.seed,
            workers: self.workers,
            adaptive: self.adaptive,
            cache: self.cache.parse().map_err(value_err)?,
            density: self.density,
            static_fraction: self.static_fraction,
            speed_min: self.speed_min,
            speed_max: self.speed_max,
            sleep_time: 0,
            interaction_range: self.interaction_range,
            forwarding_range: self.forwarding_range,
            cell_size: self.cell_size,
            ttl: self.ttl,
            dissemination_probability: self.dissemination_probability,
            generation_probability: self.generation_probability,
            migration_window: self.migration_window,
            migration_period: self.migration_period,
            migration_threshold: self.migration_threshold,
            migration_max: self.migration_max,
        };
        let c = SimConfig::from(&file);
        c.validate().map_err(value_err)?;
        Ok(c)
    }
}

#[pymethods]
impl PyConfig {
    /// Defaults, optionally overridden by keyword arguments.
    #[new]
    #[pyo3(signature = (**overrides))]
    fn new(py: Python<'_>, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let this = Bound::new(py, PyConfig::from(&SimConfig::default()))?;
        if let Some(d) = overrides {
            for (k, v) in d.iter() {
                this.setattr(k.extract::<String>()?.as_str(), v)?;
            }
        }
        let out = this.borrow().clone();
        Ok(out)
    }

    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        let p: Preset = name.parse().map_err(value_err)?;
        Ok(PyConfig::from(&p.config()))
    }

    #[staticmethod]
    fn from_scenario(text: &str) -> PyResult<Self> {
        Ok(PyConfig::from(&parse_scenario(text).map_err(value_err)?))
    }

    fn to_scenario(&self) -> PyResult<String> {
        Ok(emit_scenario(&self.to_sim()?))
    }

    fn validate(&self) -> PyResult<()> {
        self.to_sim().map(|_| ())
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(entities={}, steps={}, seed={}, workers={}, adaptive={}, cache='{}')",
            self.entities,
            self.steps,
            self.seed,
            self.workers,
            if self.adaptive { "True" } else { "False" },
            self.cache
        )
    }
}

fn frame_dict<'py>(py: Python<'py>, f: &MetricsFrame) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("step", f.step)?;
    d.set_item("originated", f.originated)?;
    d.set_item("forwards", f.forwards_emitted)?;
    d.set_item("deliveries_total", f.deliveries_total)?;
    d.set_item("deliveries_unique", f.deliveries_unique)?;
    d.set_item("deliveries_duplicate", f.deliveries_duplicate)?;
    d.set_item("drop_ttl", f.drop_ttl)?;
    d.set_item("drop_distance", f.drop_distance)?;
    d.set_item("drop_probability", f.drop_probability)?;
    d.set_item("drop_duplicate", f.drop_duplicate)?;
    d.set_item("remote_transfers", f.remote_transfers)?;
    d.set_item("migrations", f.migrations)?;
    Ok(d)
}

/// Outcome of a simulation run.
#[pyclass(name = "RunResult", module = "pbbsim_py", frozen)]
pub struct PyRunResult {
    series: Vec<MetricsFrame>,
    #[pyo3(get)]
    coverage: Option<f64>,
    #[pyo3(get)]
    forwarded_fraction: f64,
    #[pyo3(get)]
    wall_clock_seconds: f64,
}

#[pymethods]
impl PyRunResult {
    /// Per-step counters as a list of dicts.
    fn series<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.series.iter().map(|f| frame_dict(py, f)).collect()
    }

    fn totals<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let mut t = metrics::totals(&self.series);
        t.step = 0;
        let d = frame_dict(py, &t)?;
        d.del_item("step")?;
        Ok(d)
    }

    fn csv(&self) -> String {
        series_csv(&self.series)
    }

    fn __len__(&self) -> usize {
        self.series.len()
    }
}

/// Runs the simulation. The GIL is released while it runs.
#[pyfunction]
fn run(py: Python<'_>, config: PyRef<'_, PyConfig>) -> PyResult<PyRunResult> {
    let c = config.to_sim()?;
    let (series, s) = py
        .detach(|| pbbsim::run(&c))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(PyRunResult {
        series,
        coverage: s.coverage,
        forwarded_fraction: s.forwarded_fraction,
        wall_clock_seconds: s.wall_clock_seconds(),
    })
}

/// Runs the brute-force reference simulator (small instances only).
#[pyfunction]
fn oracle_run(py: Python<'_>, config: PyRef<'_, PyConfig>) -> PyResult<PyRunResult> {
    let c = config.to_sim()?;
    let out = py.detach(|| oracle::oracle_run(&c)).map_err(value_err)?;
    let totals = metrics::totals(&out.series);
    Ok(PyRunResult {
        forwarded_fraction: metrics::forwarded_fraction(&totals),
        series: out.series,
        coverage: out.coverage,
        wall_clock_seconds: 0.0,
    })
}

/// True when the engine reproduces the reference simulator exactly.
#[pyfunction]
fn verify(py: Python<'_>, config: PyRef<'_, PyConfig>) -> PyResult<bool> {
    let c = config.to_sim()?;
    py.detach(|| {
        let reference = oracle::oracle_run(&c).map_err(value_err)?;
        let (series, s) = pbbsim::run(&c).map_err(value_err)?;
        Ok(series == reference.series && s.coverage == reference.coverage)
    })
}

#[pyfunction]
fn torus_distance(a: (f64, f64), b: (f64, f64), side: f64) -> PyResult<f64> {
    let world = pbbsim::WorldSpec::new(side, side).map_err(value_err)?;
    Ok(pbbsim::torus_distance(
        pbbsim::Position::new(a.0, a.1),
        pbbsim::Position::new(b.0, b.1),
        &world,
    ))
}

/// Indices of `points` within `radius` of `center` on a torus of edge
/// `side`, using a grid of `cell_size` cells.
#[pyfunction]
#[pyo3(signature = (points, center, radius, side, cell_size=None))]
fn neighbors(points: Vec<(f64, f64)>, center: (f64, f64), radius: f64, side: f64, cell_size: Option<f64>) -> PyResult<Vec<u32>> {
    let world = pbbsim::WorldSpec::new(side, cell_size.unwrap_or(radius.max(f64::MIN_POSITIVE).min(side)))
        .map_err(value_err)?;
    let index = pbbsim::SpatialIndex::build(
        points
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| (i as u32, world.wrap_position(x, y))),
        &world,
    );
    index
        .neighbors_within(world.wrap_position(center.0, center.1), radius, None)
        .map_err(value_err)
}

#[pyfunction]
fn presets() -> Vec<&'static str> {
    Preset::ALL.iter().map(|p| p.name()).collect()
}

#[pyfunction]
fn speedup(sequential_seconds: f64, parallel_seconds: f64) -> PyResult<f64> {
    let d = |s: f64| Duration::try_from_secs_f64(s).map_err(value_err);
    metrics::speedup(d(sequential_seconds)?, d(parallel_seconds)?).map_err(value_err)
}

#[pymodule]
fn pbbsim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyRunResult>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_run, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(torus_distance, m)?)?;
    m.add_function(wrap_pyfunction!(neighbors, m)?)?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(speedup, m)?)?;
    m.add("CSV_HEADER", metrics::CSV_HEADER)?;
    Ok(())
}
