//! Python bindings. Clips, values and reports cross the boundary as plain
//! dicts and lists in the same shape as the JSON-lines files.

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;

use scenebench::config::{Config, SmoothnessMode};
use scenebench::grpo::{group_advantages as advantages, DEFAULT_EPS};
use scenebench::qa::QaError;
use scenebench::reward::{smoothness_of, RewardError};
use scenebench::schema::{AttributeValue, Clip, PredictionClip, Task};
use scenebench::serve;
use scenebench::synth::{corrupt_with, generate_dataset, NoiseModel};

create_exception!(scenebench, ScenebenchError, PyException);

/// Raised errors carry `(code, message)` as their args.
fn err(code: &str, message: impl ToString) -> PyErr {
    ScenebenchError::new_err((code.to_string(), message.to_string()))
}

fn dumps(obj: &Bound<'_, PyAny>) -> PyResult<String> {
    PyModule::import(obj.py(), "json")?
        .call_method1("dumps", (obj,))?
        .extract()
}

fn from_py<T: serde::de::DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    serde_json::from_str(&dumps(obj)?).map_err(|e| err("parse", e))
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| err("internal", e))?;
    PyModule::import(py, "json")?.call_method1("loads", (text,))
}

fn task_of(name: &str) -> PyResult<Task> {
    Task::from_name(name).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn qa_err(e: QaError) -> PyErr {
    let code = match e {
        QaError::Unparseable(_) => "unparseable",
        QaError::Ambiguous(_) => "ambiguous",
        QaError::Table { .. } => "templates",
    };
    err(code, e)
}

fn reward_err(e: RewardError) -> PyErr {
    let code = match e {
        RewardError::SeriesTooShort { .. } => "series_too_short",
        RewardError::ClipLengthMismatch { .. } => "clip_length_mismatch",
    };
    err(code, e)
}

fn config_of(text: Option<&str>) -> PyResult<Config> {
    match text {
        Some(t) => Config::parse(t).map_err(|e| err("config", e)),
        None => Ok(Config::default()),
    }
}

/// Reward, consistency checks and answer parsing under one configuration.
#[pyclass(name = "Engine", module = "scenebench", frozen)]
struct PyEngine {
    inner: serve::Engine,
}

#[pymethods]
impl PyEngine {
    /// `config` is the TOML text of a config file.
    #[new]
    #[pyo3(signature = (config = None))]
    fn new(config: Option<&str>) -> PyResult<Self> {
        let inner = serve::Engine::new(config_of(config)?).map_err(|e| err("config", e))?;
        Ok(PyEngine { inner })
    }

    fn reward<'py>(&self, pred: &Bound<'py, PyAny>, gt: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
        let p: PredictionClip = from_py(pred)?;
        let g: Clip = from_py(gt)?;
        let breakdown = self.inner.reward(&p, &g).map_err(reward_err)?;
        to_py(pred.py(), &breakdown)
    }

    fn check<'py>(&self, clip: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
        let c: Clip = from_py(clip)?;
        to_py(clip.py(), &self.inner.check(&c))
    }

    fn parse<'py>(&self, py: Python<'py>, text: &str, task: &str) -> PyResult<Bound<'py, PyAny>> {
        let value = self.inner.parse(task_of(task)?, text).map_err(qa_err)?;
        to_py(py, &value)
    }

    fn render(&self, value: &Bound<'_, PyAny>) -> PyResult<String> {
        let v: AttributeValue = from_py(value)?;
        Ok(self.inner.templates.render_answer(&v))
    }

    fn question(&self, task: &str) -> PyResult<String> {
        Ok(self.inner.templates.render_question(task_of(task)?).to_string())
    }

    /// Handles one raw protocol line and returns the raw response line.
    fn handle_line(&self, line: &str) -> String {
        self.inner.handle_line(line, 1).to_string()
    }
}

#[pyfunction]
fn render_question(task: &str) -> PyResult<String> {
    Ok(scenebench::qa::render_question(task_of(task)?))
}

/// `value` is `{"task": ..., "value": ...}`.
#[pyfunction]
fn render_answer(value: &Bound<'_, PyAny>) -> PyResult<String> {
    let v: AttributeValue = from_py(value)?;
    Ok(scenebench::qa::render_answer(&v))
}

#[pyfunction]
fn parse_answer<'py>(py: Python<'py>, text: &str, task: &str) -> PyResult<Bound<'py, PyAny>> {
    let value = scenebench::qa::parse_answer(text, task_of(task)?).map_err(qa_err)?;
    to_py(py, &value)
}

#[pyfunction]
#[pyo3(signature = (rewards, eps = DEFAULT_EPS))]
fn group_advantages(rewards: Vec<f64>, eps: f64) -> PyResult<Vec<f64>> {
    advantages(&rewards, eps).map_err(|e| err("group_too_small", e))
}

/// Smoothness of one channel's encoded values; `None` marks a missing answer.
#[pyfunction]
#[pyo3(signature = (values, clamped = true))]
fn smoothness(values: Vec<Option<i64>>, clamped: bool) -> PyResult<f64> {
    let mode = if clamped {
        SmoothnessMode::RawClamped
    } else {
        SmoothnessMode::Raw
    };
    smoothness_of(&values, mode).map_err(reward_err)
}

#[pyfunction]
#[pyo3(signature = (pred, gt, config = None))]
fn reward<'py>(pred: &Bound<'py, PyAny>, gt: &Bound<'py, PyAny>, config: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    PyEngine::new(config)?.reward(pred, gt)
}

#[pyfunction]
#[pyo3(signature = (clip, config = None))]
fn check_clip<'py>(clip: &Bound<'py, PyAny>, config: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    PyEngine::new(config)?.check(clip)
}

/// Synthetic ground-truth clips.
#[pyfunction]
#[pyo3(signature = (count, seed = 0, frames = None, config = None))]
fn generate<'py>(
    py: Python<'py>,
    count: usize,
    seed: u64,
    frames: Option<usize>,
    config: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config_of(config)?;
    let rules = cfg.rule_set().map_err(|e| err("config", e))?;
    let mut params = cfg.generator.clone();
    if let Some(f) = frames {
        params.frames = f;
    }
    let clips = generate_dataset(count, &rules, &params, &cfg.domain, seed).map_err(|e| err("synth", e))?;
    to_py(py, &clips)
}

/// Noisy prediction for one clip. `burst` selects an occlusion burst of
/// that length; otherwise the config's noise model applies.
#[pyfunction]
#[pyo3(signature = (clip, seed = 0, burst = None, config = None))]
fn corrupt<'py>(
    clip: &Bound<'py, PyAny>,
    seed: u64,
    burst: Option<usize>,
    config: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config_of(config)?;
    let noise = match burst {
        Some(len) => NoiseModel::occlusion_burst(len),
        None => cfg.noise.clone(),
    };
    noise.validate().map_err(|e| err("config", e))?;
    let c: Clip = from_py(clip)?;
    to_py(clip.py(), &corrupt_with(&c, &noise, &cfg.domain, seed))
}

#[pymodule]
#[pyo3(name = "scenebench")]
fn scenebench_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("ScenebenchError", m.py().get_type::<ScenebenchError>())?;
    m.add_class::<PyEngine>()?;
    m.add_function(wrap_pyfunction!(render_question, m)?)?;
    m.add_function(wrap_pyfunction!(render_answer, m)?)?;
    m.add_function(wrap_pyfunction!(parse_answer, m)?)?;
    m.add_function(wrap_pyfunction!(group_advantages, m)?)?;
    m.add_function(wrap_pyfunction!(smoothness, m)?)?;
    m.add_function(wrap_pyfunction!(reward, m)?)?;
    m.add_function(wrap_pyfunction!(check_clip, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(corrupt, m)?)?;
    Ok(())
}
