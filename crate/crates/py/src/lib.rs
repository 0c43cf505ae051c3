//! Python bindings for the fleet learning engine.
//!
//! Simulations release the GIL, so independent runs can be driven from Python
//! threads.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use fleetlearn::allocation::{self, AllocationMatrix, AllocatorConfig, PriorityVector};
use fleetlearn::env::{expert_policy, Cell, Environment, GridEnv, InterventionKind, InterventionRecord, RobotState};
use fleetlearn::metrics::{MetricsRecord, RoheConfig};
use fleetlearn::priorities::{self, PriorityConfig, PriorityKind, UncertaintyMeasure};
use fleetlearn::runner::{self, RunOutcome, SweepAxis};

trait IntoPy<T> {
    fn py_err(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for fleetlearn::Result<T> {
    fn py_err(self) -> PyResult<T> {
        self.map_err(|e| PyValueError::new_err(e.to_string()))
    }
}

fn metrics_dict<'py>(py: Python<'py>, r: &MetricsRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("t", r.t)?;
    d.set_item("cum_reward", r.cum_reward)?;
    d.set_item("cum_successes", r.cum_successes)?;
    d.set_item("cum_hard_resets", r.cum_hard_resets)?;
    d.set_item("cum_violations", r.cum_violations)?;
    d.set_item("cum_idle_time", r.cum_idle_time)?;
    d.set_item("cum_human_steps", r.cum_human_steps)?;
    d.set_item("violating", r.violating)?;
    d.set_item("rohe", r.rohe)?;
    Ok(d)
}

/// Experiment configuration. Construct from TOML or start from the defaults
/// and set attributes.
#[pyclass(name = "RunConfig", from_py_object)]
#[derive(Clone)]
struct PyRunConfig {
    inner: runner::RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[new]
    #[pyo3(signature = (toml=None))]
    fn new(toml: Option<&str>) -> PyResult<Self> {
        let inner = match toml {
            Some(text) => runner::RunConfig::from_toml(text).py_err()?,
            None => runner::RunConfig::default(),
        };
        Ok(PyRunConfig { inner })
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().py_err()
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().py_err()
    }

    #[getter]
    fn num_robots(&self) -> usize {
        self.inner.num_robots
    }
    #[setter]
    fn set_num_robots(&mut self, v: usize) {
        self.inner.num_robots = v;
    }
    #[getter]
    fn num_humans(&self) -> usize {
        self.inner.num_humans
    }
    #[setter]
    fn set_num_humans(&mut self, v: usize) {
        self.inner.num_humans = v;
    }
    #[getter]
    fn timesteps(&self) -> u64 {
        self.inner.timesteps
    }
    #[setter]
    fn set_timesteps(&mut self, v: u64) {
        self.inner.timesteps = v;
    }
    #[getter]
    fn t_teleop(&self) -> u32 {
        self.inner.t_teleop
    }
    #[setter]
    fn set_t_teleop(&mut self, v: u32) {
        self.inner.t_teleop = v;
    }
    #[getter]
    fn t_reset(&self) -> u32 {
        self.inner.t_reset
    }
    #[setter]
    fn set_t_reset(&mut self, v: u32) {
        self.inner.t_reset = v;
    }
    #[getter]
    fn sticky_reassignment(&self) -> bool {
        self.inner.sticky_reassignment
    }
    #[setter]
    fn set_sticky_reassignment(&mut self, v: bool) {
        self.inner.sticky_reassignment = v;
    }
    /// One of constraint, random, uc, ugc, cur.
    #[getter]
    fn priority(&self) -> &'static str {
        self.inner.priority.name()
    }
    #[setter]
    fn set_priority(&mut self, v: &str) -> PyResult<()> {
        self.inner.priority = v.parse::<PriorityKind>().py_err()?;
        Ok(())
    }
    /// entropy or ensemble_variance.
    #[getter]
    fn uncertainty(&self) -> &'static str {
        match self.inner.priority_params.uncertainty {
            UncertaintyMeasure::Entropy => "entropy",
            UncertaintyMeasure::EnsembleVariance => "ensemble_variance",
        }
    }
    #[setter]
    fn set_uncertainty(&mut self, v: &str) -> PyResult<()> {
        self.inner.priority_params.uncertainty = match v {
            "entropy" => UncertaintyMeasure::Entropy,
            "ensemble_variance" => UncertaintyMeasure::EnsembleVariance,
            other => return Err(PyValueError::new_err(format!("unknown uncertainty measure {other:?}"))),
        };
        Ok(())
    }
    #[getter]
    fn random_threshold(&self) -> f64 {
        self.inner.priority_params.random_threshold
    }
    #[setter]
    fn set_random_threshold(&mut self, v: f64) {
        self.inner.priority_params.random_threshold = v;
    }
    #[getter]
    fn offline_pairs(&self) -> usize {
        self.inner.learner.offline_pairs
    }
    #[setter]
    fn set_offline_pairs(&mut self, v: usize) {
        self.inner.learner.offline_pairs = v;
    }
    #[getter]
    fn seeds(&self) -> Vec<u64> {
        self.inner.seeds.clone()
    }
    #[setter]
    fn set_seeds(&mut self, v: Vec<u64>) {
        self.inner.seeds = v;
    }

    fn __repr__(&self) -> String {
        format!(
            "RunConfig(N={}, M={}, T={}, t_T={}, t_R={}, priority={})",
            self.inner.num_robots,
            self.inner.num_humans,
            self.inner.timesteps,
            self.inner.t_teleop,
            self.inner.t_reset,
            self.inner.priority.name()
        )
    }
}

/// A finished scripted run.
#[pyclass(name = "RunResult", frozen)]
struct PyRunResult {
    out: RunOutcome,
}

#[pymethods]
impl PyRunResult {
    #[getter]
    fn seed(&self) -> u64 {
        self.out.seed
    }

    /// Cumulative metrics after the last timestep.
    #[getter]
    fn final_metrics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        metrics_dict(py, &self.out.final_metrics())
    }

    /// One metrics dict per timestep.
    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.out.metrics.iter().map(|r| metrics_dict(py, r)).collect()
    }

    fn metrics_csv(&self) -> PyResult<String> {
        Ok(String::from_utf8_lossy(&self.out.metrics_csv().py_err()?).into_owned())
    }

    fn steps_csv(&self) -> PyResult<String> {
        Ok(String::from_utf8_lossy(&self.out.steps_csv().py_err()?).into_owned())
    }

    fn dataset_records(&self) -> PyResult<String> {
        Ok(String::from_utf8_lossy(&self.out.dataset_records().py_err()?).into_owned())
    }

    #[getter]
    fn dataset_size(&self) -> usize {
        self.out.dataset.len()
    }

    #[getter]
    fn online_pairs(&self) -> usize {
        self.out.dataset.online_len()
    }

    /// Whether the final policy weights equal the initial ones byte for byte.
    #[getter]
    fn policy_unchanged(&self) -> bool {
        self.out.policy.weight_bytes() == self.out.initial_policy.weight_bytes()
    }

    /// SHA-256 digests of the logs and policies.
    fn digests<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = self.out.digests().py_err()?;
        let out = PyDict::new(py);
        out.set_item("metrics", d.metrics)?;
        out.set_item("steps", d.steps)?;
        out.set_item("dataset", d.dataset)?;
        out.set_item("initial_policy", d.initial_policy)?;
        out.set_item("final_policy", d.final_policy)?;
        Ok(out)
    }

    /// Writes the run's artifacts into `dir` and returns the directory.
    fn write_artifacts(&self, dir: PathBuf, config: &PyRunConfig) -> PyResult<PathBuf> {
        Ok(self.out.write_artifacts(&dir, &config.inner).py_err()?.dir)
    }

    fn __repr__(&self) -> String {
        let r = self.out.final_metrics();
        format!(
            "RunResult(seed={}, t={}, successes={}, hard_resets={}, human_steps={}, rohe={:.4})",
            self.out.seed, r.t, r.cum_successes, r.cum_hard_resets, r.cum_human_steps, r.rohe
        )
    }
}

/// Runs one seed with the scripted expert supervisor.
#[pyfunction]
fn run(py: Python<'_>, config: &PyRunConfig, seed: u64) -> PyResult<PyRunResult> {
    let cfg = config.inner.clone();
    let out = py.detach(move || runner::run_scripted(&cfg, seed)).py_err()?;
    Ok(PyRunResult { out })
}

/// Runs every value of `axis` (M, t_T, t_R or priority) for each configured
/// seed. Returns `(value, seed, final_metrics)` tuples.
#[pyfunction]
fn sweep<'py>(
    py: Python<'py>,
    config: &PyRunConfig,
    axis: &str,
    values: Vec<String>,
) -> PyResult<Vec<(String, u64, Bound<'py, PyDict>)>> {
    let axis: SweepAxis = axis.parse().py_err()?;
    let cfg = config.inner.clone();
    let result = py.detach(move || runner::run_sweep(&cfg, axis, &values)).py_err()?;
    result.runs.iter().map(|r| Ok((r.value.clone(), r.seed, metrics_dict(py, &r.last)?))).collect()
}

/// Random-priority threshold that spends `human_steps` over `n` robots and `t` steps.
#[pyfunction]
fn matched_random_threshold(human_steps: f64, n: usize, t: u64) -> f64 {
    runner::matched_random_threshold(human_steps, n, t)
}

fn parse_kind(s: &str) -> PyResult<InterventionKind> {
    match s {
        "none" => Ok(InterventionKind::None),
        "teleop" => Ok(InterventionKind::Teleop),
        "hard_reset" => Ok(InterventionKind::HardReset),
        other => Err(PyValueError::new_err(format!("unknown intervention kind {other:?}"))),
    }
}

/// Allocates humans to robots for one timestep.
///
/// `previous` lists last step's `(robot, human)` pairs and `interventions`
/// one `(kind, duration, human)` record per robot, with kind in
/// none | teleop | hard_reset. Returns the new `(robot, human)` pairs.
#[pyfunction]
#[pyo3(signature = (priorities, num_humans, previous=Vec::new(), interventions=None, t_teleop=5, t_reset=5, sticky=true))]
fn allocate(
    priorities: Vec<f64>,
    num_humans: usize,
    previous: Vec<(usize, usize)>,
    interventions: Option<Vec<(String, u32, Option<usize>)>>,
    t_teleop: u32,
    t_reset: u32,
    sticky: bool,
) -> PyResult<Vec<(usize, usize)>> {
    let n = priorities.len();
    let prev = AllocationMatrix::from_pairs(n, num_humans, &previous).py_err()?;
    let records = match interventions {
        None => vec![InterventionRecord::NONE; n],
        Some(rs) => rs
            .into_iter()
            .map(|(kind, duration, human)| Ok(InterventionRecord { kind: parse_kind(&kind)?, duration, human }))
            .collect::<PyResult<Vec<_>>>()?,
    };
    let cfg = AllocatorConfig { t_teleop, t_reset, sticky_reassignment: sticky };
    let alloc = allocation::allocate(&PriorityVector(priorities), &prev, &records, &cfg).py_err()?;
    Ok(alloc.pairs().collect())
}

/// Return on human effort: `(M/N) * cum_reward / (1 + cum_human_steps / unit)`.
#[pyfunction]
#[pyo3(signature = (num_humans, num_robots, cum_reward, cum_human_steps, human_time_unit=100))]
fn rohe(num_humans: usize, num_robots: usize, cum_reward: f64, cum_human_steps: u64, human_time_unit: u64) -> f64 {
    fleetlearn::metrics::rohe(num_humans, num_robots, cum_reward, cum_human_steps, &RoheConfig { human_time_unit })
}

#[pyfunction]
fn entropy_uncertainty(dist: Vec<f64>) -> PyResult<f64> {
    priorities::entropy_uncertainty(&dist).py_err()
}

#[pyfunction]
fn ensemble_variance(predictions: Vec<Vec<f64>>) -> PyResult<f64> {
    priorities::ensemble_variance(&predictions).py_err()
}

#[pyfunction]
fn constraint_priority(violations: Vec<bool>) -> Vec<f64> {
    priorities::constraint_priority(&violations).0
}

/// C.U.R. priorities: violators first, then uncertain robots, then risky ones.
#[pyfunction]
#[pyo3(signature = (violations, uncertainty, risk, t, u_threshold=None, risk_threshold=None, t_initial=None))]
fn cur_priority(
    violations: Vec<bool>,
    uncertainty: Vec<f64>,
    risk: Vec<f64>,
    t: u64,
    u_threshold: Option<f64>,
    risk_threshold: Option<f64>,
    t_initial: Option<u64>,
) -> PyResult<Vec<f64>> {
    let d = PriorityConfig::default();
    let cfg = PriorityConfig {
        u_threshold: u_threshold.unwrap_or(d.u_threshold),
        risk_threshold: risk_threshold.unwrap_or(d.risk_threshold),
        t_initial: t_initial.unwrap_or(d.t_initial),
        ..d
    };
    cfg.validate().py_err()?;
    Ok(priorities::compose_cur(&violations, &uncertainty, &risk, t, &cfg).py_err()?.0)
}

/// The grid environment described by a config.
#[pyclass(name = "GridEnv", frozen)]
struct PyGridEnv {
    env: GridEnv,
}

fn state(pos: (usize, usize), goal: Option<(usize, usize)>) -> RobotState {
    RobotState::new(Cell::new(pos.0, pos.1), goal.map(|g| Cell::new(g.0, g.1)))
}

#[pymethods]
impl PyGridEnv {
    #[new]
    #[pyo3(signature = (config=None))]
    fn new(config: Option<&PyRunConfig>) -> PyResult<Self> {
        let cfg = config.map(|c| c.inner.clone()).unwrap_or_default();
        Ok(PyGridEnv { env: cfg.env.build().py_err()? })
    }

    #[getter]
    fn width(&self) -> usize {
        self.env.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.env.height()
    }

    #[getter]
    fn action_names(&self) -> Vec<&'static str> {
        fleetlearn::env::ACTION_NAMES[..self.env.spec().action_arity].to_vec()
    }

    fn free_cells(&self) -> Vec<(usize, usize)> {
        self.env.free_cells().map(|c| (c.x, c.y)).collect()
    }

    fn is_violation(&self, x: usize, y: usize) -> bool {
        self.env.is_violation(Cell::new(x, y))
    }

    /// Shortest safe path length, or `None` when the goal is unreachable.
    fn distance(&self, start: (usize, usize), goal: (usize, usize)) -> Option<u32> {
        self.env.distance(Cell::new(start.0, start.1), Cell::new(goal.0, goal.1))
    }

    /// The scripted supervisor's action: an action index, or "R" for a hard reset.
    #[pyo3(signature = (pos, goal=None))]
    fn expert_action(&self, pos: (usize, usize), goal: Option<(usize, usize)>) -> PyResult<String> {
        Ok(expert_policy(&self.env, &state(pos, goal)).py_err()?.action.to_string())
    }

    #[pyo3(signature = (pos, goal=None))]
    fn render(&self, pos: (usize, usize), goal: Option<(usize, usize)>) -> Vec<String> {
        self.env.render(&state(pos, goal))
    }
}

#[pymodule]
fn pyfleet(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyRunConfig>()?;
    m.add_class::<PyRunResult>()?;
    m.add_class::<PyGridEnv>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(matched_random_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(allocate, m)?)?;
    m.add_function(wrap_pyfunction!(rohe, m)?)?;
    m.add_function(wrap_pyfunction!(entropy_uncertainty, m)?)?;
    m.add_function(wrap_pyfunction!(ensemble_variance, m)?)?;
    m.add_function(wrap_pyfunction!(constraint_priority, m)?)?;
    m.add_function(wrap_pyfunction!(cur_priority, m)?)?;
    Ok(())
}
