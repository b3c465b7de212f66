//! Python bindings for the masqrad engine.
//!
//! Structured results cross the boundary as JSON text so the Python side
//! sees exactly what the run store persists.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use masqrad_core::config::EngineConfig;
use masqrad_core::evaluation::{self, Criterion, EvaluationScorecard};
use masqrad_core::interpreter::{self, Encoder, HashingEncoder};
use masqrad_core::kernels::selftest;
use masqrad_core::orchestrator::{self, RunStage, StoreError};
use masqrad_core::query::UserQuery;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn store_err(e: StoreError) -> PyErr {
    match e {
        StoreError::RunNotFound(_) | StoreError::InvalidRunId(_) => PyKeyError::new_err(e.to_string()),
        StoreError::CorruptRecord { .. } => PyRuntimeError::new_err(e.to_string()),
        StoreError::Io { .. } => PyIOError::new_err(e.to_string()),
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("engine types serialize")
}

/// Multi-label classifier head over the hashing encoder.
#[pyclass(module = "masqrad", frozen)]
struct ClassifierHead {
    head: interpreter::ClassifierHead,
    encoder: HashingEncoder,
}

impl ClassifierHead {
    fn wrap(head: interpreter::ClassifierHead) -> Self {
        Self {
            encoder: HashingEncoder::new(head.dim()),
            head,
        }
    }
}

#[pymethods]
impl ClassifierHead {
    /// The built-in keyword head.
    #[staticmethod]
    fn default() -> Self {
        Self::wrap(interpreter::default_keyword_head())
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        interpreter::ClassifierHead::from_json(text)
            .map(Self::wrap)
            .map_err(value_err)
    }

    fn to_json(&self) -> String {
        self.head.to_json()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.head.labels().to_vec()
    }

    #[getter]
    fn threshold(&self) -> f64 {
        self.head.threshold()
    }

    /// Per-label probabilities for `text`, in label order.
    fn probabilities(&self, text: &str) -> PyResult<Vec<f64>> {
        let embedding = self.encoder.embed(text).map_err(value_err)?;
        interpreter::predict_probs(&embedding, &self.head).map_err(value_err)
    }

    /// Labels at or above the threshold with their probabilities.
    fn predict(&self, text: &str) -> PyResult<Vec<(String, f64)>> {
        let probs = self.probabilities(text)?;
        Ok(interpreter::threshold_labels(&probs, &self.head))
    }
}

/// An engine built from a TOML config file.
#[pyclass(module = "masqrad", frozen)]
struct Engine {
    engine: orchestrator::Engine,
    runtime: tokio::runtime::Runtime,
}

#[pymethods]
impl Engine {
    #[new]
    fn new(config_path: PathBuf) -> PyResult<Self> {
        let config = EngineConfig::load(&config_path).map_err(value_err)?;
        let engine = config.build_engine().map_err(value_err)?;
        let runtime = tokio::runtime::Runtime::new().map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok(Self { engine, runtime })
    }

    /// Runs the full pipeline and returns the persisted run record as JSON.
    /// A run that fails inside a stage is still returned; inspect `stage`.
    fn run(&self, py: Python<'_>, query: String, dataset: String) -> PyResult<String> {
        let run = py
            .detach(|| {
                self.runtime
                    .block_on(self.engine.run_pipeline(UserQuery::from_text(query), &dataset))
            })
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok(to_json(&run))
    }

    #[getter]
    fn store_root(&self) -> PathBuf {
        self.engine.store().root().to_path_buf()
    }
}

/// Read access to a run store directory.
#[pyclass(module = "masqrad", frozen)]
struct RunStore {
    store: orchestrator::RunStore,
}

#[pymethods]
impl RunStore {
    #[new]
    fn new(root: PathBuf) -> PyResult<Self> {
        orchestrator::RunStore::open(root)
            .map(|store| Self { store })
            .map_err(store_err)
    }

    fn list_runs(&self) -> PyResult<Vec<String>> {
        self.store.list_runs().map_err(store_err)
    }

    /// The verified run record as JSON.
    fn load_run(&self, run_id: &str) -> PyResult<String> {
        self.store.load_run(run_id).map(|r| to_json(&r)).map_err(store_err)
    }

    /// Transition log entries as JSON objects, one string per entry.
    fn transitions(&self, run_id: &str) -> PyResult<Vec<String>> {
        let log = self.store.read_transitions(run_id).map_err(store_err)?;
        Ok(log.iter().map(to_json).collect())
    }
}

/// Fraction of accurate queries.
#[pyfunction]
fn accuracy(total_queries: usize, inaccurate_queries: usize) -> PyResult<f64> {
    evaluation::accuracy(total_queries, inaccurate_queries).map_err(value_err)
}

/// Failures per criterion, failure sum and distinct inaccurate count.
type Breakdown = (Vec<(String, usize)>, usize, usize);

/// `(failures per criterion, failure sum, distinct inaccurate)` from
/// `(query_id, dataset, failed_criteria)` triples.
#[pyfunction]
fn inaccuracy_breakdown(scorecards: Vec<(String, String, Vec<String>)>) -> PyResult<Breakdown> {
    let cards = scorecards
        .into_iter()
        .map(|(id, dataset, failed)| {
            let failed = failed
                .iter()
                .map(|c| Criterion::parse(c).ok_or_else(|| value_err(format!("unknown criterion {c:?}"))))
                .collect::<PyResult<Vec<_>>>()?;
            Ok(EvaluationScorecard::with_failures(id, dataset, &failed))
        })
        .collect::<PyResult<Vec<_>>>()?;
    let b = evaluation::inaccuracy_breakdown(&cards);
    let counts = Criterion::ALL
        .iter()
        .map(|c| (c.as_str().to_string(), b.count(*c)))
        .collect();
    Ok((counts, b.failure_sum, b.distinct_inaccurate))
}

/// Mean and sample standard deviation of stage durations in seconds.
#[pyfunction]
fn duration_stats(samples: Vec<f64>) -> PyResult<(f64, f64, usize)> {
    let s = orchestrator::duration_stats(RunStage::Interpreting, &samples).map_err(value_err)?;
    Ok((s.mean, s.std, s.n))
}

/// Runs the kernel invariant suite; returns `(name, passed, max_error, tolerance)`.
#[pyfunction]
#[pyo3(signature = (seed = 7))]
fn kernels_selftest(py: Python<'_>, seed: u64) -> Vec<(String, bool, f64, f64)> {
    py.detach(|| selftest::run(seed))
        .into_iter()
        .map(|c| (c.name.to_string(), c.passed, c.max_error, c.tolerance))
        .collect()
}

/// Pipeline stage names in order.
#[pyfunction]
fn pipeline_stages() -> Vec<&'static str> {
    RunStage::PIPELINE.iter().map(|s| s.as_str()).collect()
}

#[pymodule]
fn masqrad(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<ClassifierHead>()?;
    m.add_class::<Engine>()?;
    m.add_class::<RunStore>()?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(inaccuracy_breakdown, m)?)?;
    m.add_function(wrap_pyfunction!(duration_stats, m)?)?;
    m.add_function(wrap_pyfunction!(kernels_selftest, m)?)?;
    m.add_function(wrap_pyfunction!(pipeline_stages, m)?)?;
    m.add(
        "CRITERIA",
        Criterion::ALL.iter().map(|c| c.as_str()).collect::<Vec<_>>(),
    )?;
    Ok(())
}
