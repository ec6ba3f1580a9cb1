//! Python bindings: environments, experiment configs, trainers, snapshots,
//! run comparison and the invariant checks.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use mnmpg::envs::{make_env, DecPomdp};
use mnmpg::harness::{self, checks, io, ExperimentConfig};
use mnmpg::train::{MetricsRow, Trainer as CoreTrainer};

fn err(e: mnmpg::Error) -> PyErr {
    match e {
        mnmpg::Error::Io(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// A cooperative environment built by name (`matrix3` or `grid_gather`).
#[pyclass(unsendable)]
struct Env {
    inner: Box<dyn DecPomdp>,
}

#[pymethods]
impl Env {
    #[new]
    fn new(name: &str) -> PyResult<Self> {
        Ok(Env {
            inner: make_env(name).map_err(err)?,
        })
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    #[getter]
    fn n_agents(&self) -> usize {
        self.inner.spec().n_agents
    }

    #[getter]
    fn action_count(&self) -> usize {
        self.inner.spec().action_count
    }

    #[getter]
    fn obs_dim(&self) -> usize {
        self.inner.spec().obs_dim
    }

    #[getter]
    fn state_dim(&self) -> usize {
        self.inner.spec().state_dim
    }

    #[getter]
    fn max_episode_len(&self) -> usize {
        self.inner.spec().max_episode_len
    }

    /// Returns `(state, observations)`.
    fn reset(&mut self, seed: u64) -> (Vec<f64>, Vec<Vec<f64>>) {
        self.inner.reset(seed)
    }

    /// Returns `(reward, next_state, next_obs, done, win)`.
    #[allow(clippy::type_complexity)]
    fn step(&mut self, actions: Vec<usize>) -> PyResult<(f64, Vec<f64>, Vec<Vec<f64>>, bool, Option<bool>)> {
        let r = self.inner.step(&actions).map_err(err)?;
        Ok((r.reward, r.next_state, r.next_obs, r.done, r.win))
    }

    fn optimal_return(&self) -> PyResult<f64> {
        self.inner.optimal_return().map_err(err)
    }

    fn state_index(&self, state: Vec<f64>) -> PyResult<usize> {
        self.inner.state_index(&state).map_err(err)
    }
}

/// An experiment config parsed from flat TOML.
#[pyclass(unsendable, skip_from_py_object)]
#[derive(Clone)]
struct Config {
    inner: ExperimentConfig,
}

#[pymethods]
impl Config {
    #[staticmethod]
    #[pyo3(signature = (path, overrides = Vec::new()))]
    fn load(path: PathBuf, overrides: Vec<String>) -> PyResult<Self> {
        Ok(Config {
            inner: ExperimentConfig::load_with_overrides(&path, &overrides).map_err(err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (text, overrides = Vec::new()))]
    fn parse(text: &str, overrides: Vec<String>) -> PyResult<Self> {
        let text = harness::apply_overrides(text, &overrides).map_err(err)?;
        Ok(Config {
            inner: ExperimentConfig::parse_str(&text, "<string>").map_err(err)?,
        })
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn seeds(&self) -> Vec<u64> {
        self.inner.seeds.clone()
    }

    #[getter]
    fn output_dir(&self) -> PathBuf {
        self.inner.output_dir.clone()
    }

    #[getter]
    fn env(&self) -> String {
        self.inner.trainer.env.clone()
    }

    #[getter]
    fn mixer(&self) -> String {
        self.inner.trainer.mixer.to_string()
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(err)
    }

    /// Trains every seed; returns one dict of file paths and finals per seed.
    fn run(&self, py: Python<'_>) -> PyResult<Vec<Py<PyAny>>> {
        let outs = harness::run_experiment(&self.inner).map_err(err)?;
        outs.into_iter()
            .map(|o| {
                let d = pyo3::types::PyDict::new(py);
                d.set_item("seed", o.seed)?;
                d.set_item("metrics", o.metrics)?;
                d.set_item("visitation", o.visitation)?;
                d.set_item("snapshot", o.snapshot)?;
                d.set_item("final_return", o.final_return)?;
                d.set_item("final_win_rate", o.final_win_rate)?;
                Ok(d.into_any().unbind())
            })
            .collect()
    }
}

fn row_dict<'py>(py: Python<'py>, r: &MetricsRow) -> PyResult<Bound<'py, pyo3::types::PyDict>> {
    let d = pyo3::types::PyDict::new(py);
    d.set_item("env_steps", r.env_steps)?;
    d.set_item("train_steps", r.train_steps)?;
    d.set_item("eps", r.eps)?;
    d.set_item("td_loss", r.td_loss)?;
    d.set_item("meta_reward", r.meta_reward)?;
    d.set_item("eval_mean_return", r.eval_mean_return)?;
    d.set_item("eval_win_rate", r.eval_win_rate)?;
    d.set_item("wallclock_s", r.wallclock_s)?;
    Ok(d)
}

/// One seed of training, steppable from Python.
#[pyclass(unsendable)]
struct Trainer {
    inner: CoreTrainer,
}

#[pymethods]
impl Trainer {
    #[new]
    #[pyo3(signature = (config, seed = None))]
    fn new(config: &Config, seed: Option<u64>) -> PyResult<Self> {
        let seed = seed.unwrap_or(config.inner.seeds[0]);
        Ok(Trainer {
            inner: CoreTrainer::new(config.inner.for_seed(seed)).map_err(err)?,
        })
    }

    #[getter]
    fn env_steps(&self) -> u64 {
        self.inner.env_steps
    }

    #[getter]
    fn train_steps(&self) -> u64 {
        self.inner.train_steps
    }

    #[getter]
    fn buffer_len(&self) -> usize {
        self.inner.buffer.len()
    }

    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.eps()
    }

    /// One outer iteration: collection, optional meta step, Q-learning.
    fn iterate(&mut self) -> PyResult<()> {
        self.inner.iterate().map_err(err)
    }

    /// Runs to `total_env_steps` with the configured evaluations.
    fn run(&mut self) -> PyResult<()> {
        self.inner.run().map_err(err)
    }

    /// Greedy evaluation; returns `(mean_return, win_rate)`.
    fn evaluate(&mut self) -> PyResult<(f64, f64)> {
        let r = self.inner.evaluate().map_err(err)?;
        Ok((r.mean_return, r.win_rate))
    }

    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, pyo3::types::PyDict>>> {
        self.inner.metrics.iter().map(|r| row_dict(py, r)).collect()
    }

    fn metrics_csv(&self) -> String {
        io::metrics_csv(&self.inner.metrics)
    }

    /// Flattened values of every tensor whose name starts with `prefix`.
    #[pyo3(signature = (prefix = ""))]
    fn param_values(&self, prefix: &str) -> Vec<f64> {
        self.inner.learner.params.flat_values(prefix)
    }

    fn param_names(&self) -> Vec<String> {
        self.inner.learner.params.names().map(str::to_string).collect()
    }

    fn snapshot(&self) -> String {
        io::snapshot_text(&harness::snapshot_of(&self.inner))
    }
}

/// Greedy evaluation of snapshot text under `config`; returns
/// `(mean_return, win_rate, returns)`.
#[pyfunction]
#[pyo3(signature = (snapshot, config, seed = None))]
fn evaluate_snapshot(snapshot: &str, config: &Config, seed: Option<u64>) -> PyResult<(f64, f64, Vec<f64>)> {
    let snap = io::parse_snapshot(snapshot, "<string>").map_err(err)?;
    let cfg = config.inner.for_seed(seed.unwrap_or(snap.seed));
    let r = harness::evaluate_snapshot(&snap, &cfg).map_err(err)?;
    Ok((r.mean_return, r.win_rate, r.returns))
}

/// Summary CSV across seeds of the given run directories.
#[pyfunction]
fn compare(dirs: Vec<PathBuf>) -> PyResult<String> {
    Ok(harness::summary_csv(&harness::compare_dirs(&dirs).map_err(err)?))
}

/// Runs the invariant suite; returns `(criterion, name, passed, detail)`.
#[pyfunction]
fn check() -> PyResult<Vec<(u8, String, bool, String)>> {
    Ok(checks::invariant_suite()
        .map_err(err)?
        .into_iter()
        .map(|o| (o.criterion, o.name.to_string(), o.passed, o.detail))
        .collect())
}

#[pymodule]
fn mnmpg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Env>()?;
    m.add_class::<Config>()?;
    m.add_class::<Trainer>()?;
    m.add_function(wrap_pyfunction!(evaluate_snapshot, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(check, m)?)?;
    Ok(())
}
