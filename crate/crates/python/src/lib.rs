//! Python bindings. Structured results cross the boundary as plain Python
//! objects (dicts, lists, tuples).

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;

use ragbias::analysis;
use ragbias::benchmark::ContextPolarity;
use ragbias::error::Error;
use ragbias::metrics::{self, AmbiguousPrediction, DisambiguatedPrediction, MetricKind, Outcome, PredictionSet};
use ragbias::pipeline::{self, ReportFormat, RunMode, RunOptions, RunOutcome};
use ragbias::retrieval::{self, Bm25Params, EmbeddingMatrix, RankedList, Tokenizer};

create_exception!(ragbias_py, RagbiasError, PyException);

fn err(e: Error) -> PyErr {
    RagbiasError::new_err(e.to_string())
}

fn parse<T: DeserializeOwned>(what: &str, s: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| RagbiasError::new_err(format!("unknown {what} `{s}`")))
}

fn to_py<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| RagbiasError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn hits(list: RankedList) -> Vec<(String, f64)> {
    list.entries.into_iter().map(|e| (e.doc_id, e.score)).collect()
}

/// `ambiguous` holds outcomes (`stereo`, `counter`, `unknown`, `invalid`);
/// `disambiguated` holds `(context_polarity, outcome)` pairs.
fn prediction_set(ambiguous: Vec<String>, disambiguated: Vec<(String, String)>) -> PyResult<PredictionSet> {
    let mut ps = PredictionSet::default();
    for (i, o) in ambiguous.iter().enumerate() {
        ps.ambiguous.push(AmbiguousPrediction {
            instance_id: i.to_string(),
            outcome: parse("outcome", o)?,
        });
    }
    for (i, (cp, o)) in disambiguated.iter().enumerate() {
        let context_polarity: ContextPolarity = parse("context polarity", cp)?;
        let outcome: Outcome = parse("outcome", o)?;
        let correct = matches!(
            (context_polarity, outcome),
            (ContextPolarity::Stereotyped, Outcome::Stereo) | (ContextPolarity::CounterStereotyped, Outcome::Counter)
        );
        ps.disambiguated.push(DisambiguatedPrediction {
            instance_id: i.to_string(),
            context_polarity,
            correct,
            outcome,
        });
    }
    Ok(ps)
}

/// Accuracy and Diff-Bias for both views; undefined values are `None`.
#[pyfunction]
fn compute_metrics<'py>(
    py: Python<'py>,
    ambiguous: Vec<String>,
    disambiguated: Vec<(String, String)>,
) -> PyResult<Bound<'py, PyDict>> {
    let counts = prediction_set(ambiguous, disambiguated)?.counts();
    let out = PyDict::new(py);
    for kind in MetricKind::ALL {
        out.set_item(kind.as_str(), counts.value(kind).ok())?;
    }
    Ok(out)
}

#[pyfunction]
#[pyo3(signature = (ambiguous, disambiguated, metric, resamples=10_000, level=0.95, seed=0))]
fn bootstrap_ci(
    ambiguous: Vec<String>,
    disambiguated: Vec<(String, String)>,
    metric: &str,
    resamples: usize,
    level: f64,
    seed: u64,
) -> PyResult<(f64, f64)> {
    let ps = prediction_set(ambiguous, disambiguated)?;
    let kind: MetricKind = parse("metric", metric)?;
    let ci = metrics::bootstrap_ci(&ps, kind, resamples, level, seed).map_err(err)?;
    Ok((ci.low, ci.high))
}

#[pyfunction]
fn harmonic_impact(relevance: f64, bias_level: f64) -> PyResult<f64> {
    analysis::harmonic_impact(relevance, bias_level).map_err(err)
}

#[pyfunction]
fn spearman_rho(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<f64> {
    analysis::spearman_rho(&xs, &ys).map_err(err)
}

/// Exact cosine top-k over `vectors`, ties broken by id.
#[pyfunction]
fn dense_search(ids: Vec<String>, vectors: Vec<Vec<f32>>, query: Vec<f32>, k: usize) -> PyResult<Vec<(String, f64)>> {
    let m = EmbeddingMatrix::new(ids, vectors, "python").map_err(err)?;
    retrieval::dense_search(&m, "q", &query, k).map(hits).map_err(err)
}

/// BM25 index over `(id, text)` pairs.
#[pyclass(name = "SparseIndex")]
struct PySparseIndex {
    inner: retrieval::SparseIndex,
}

#[pymethods]
impl PySparseIndex {
    #[new]
    #[pyo3(signature = (docs, k1=1.2, b=0.75))]
    fn new(docs: Vec<(String, String)>, k1: f64, b: f64) -> PyResult<Self> {
        let inner = retrieval::SparseIndex::from_texts(
            docs.iter().map(|(i, t)| (i.as_str(), t.as_str())),
            Bm25Params { k1, b },
            Tokenizer::Standard,
        )
        .map_err(err)?;
        Ok(PySparseIndex { inner })
    }

    fn search(&self, query: &str, k: usize) -> Vec<(String, f64)> {
        hits(retrieval::sparse_search(&self.inner, "q", query, k))
    }

    fn __len__(&self) -> usize {
        self.inner.num_docs()
    }
}

/// A validated run configuration.
#[pyclass(name = "RunConfig")]
struct PyRunConfig {
    inner: pipeline::RunConfig,
}

#[pymethods]
impl PyRunConfig {
    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        let inner = pipeline::RunConfig::from_json_file(&path).map_err(err)?;
        Ok(PyRunConfig { inner })
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    #[getter]
    fn run_dir(&self) -> PathBuf {
        self.inner.run_dir()
    }

    #[getter]
    fn output_dir(&self) -> PathBuf {
        self.inner.output_dir.clone()
    }

    #[setter]
    fn set_output_dir(&mut self, dir: PathBuf) {
        self.inner.output_dir = dir;
    }

    /// Returns the run report, or the plan when `dry_run` is set. `mode` is
    /// `full`, `score` or `analyze`.
    #[pyo3(signature = (resume=false, dry_run=false, mode="full"))]
    fn run<'py>(&self, py: Python<'py>, resume: bool, dry_run: bool, mode: &str) -> PyResult<Bound<'py, PyAny>> {
        let mode = match mode {
            "full" => RunMode::Full,
            "score" => RunMode::Score,
            "analyze" => RunMode::Analyze,
            other => return Err(RagbiasError::new_err(format!("unknown mode `{other}`"))),
        };
        let opts = RunOptions {
            resume,
            dry_run,
            check_backends: false,
            mode,
        };
        match pipeline::run(&self.inner, &opts).map_err(err)? {
            RunOutcome::Completed(report) => to_py(py, &*report),
            RunOutcome::DryRun(plan) => to_py(py, &plan),
        }
    }
}

#[pyfunction]
fn load_run_report<'py>(py: Python<'py>, run_dir: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &pipeline::load_run_report(&run_dir).map_err(err)?)
}

/// Render a finished run as `markdown`, `csv` or `json` text.
#[pyfunction]
#[pyo3(signature = (run_dir, format="markdown"))]
fn render_report(run_dir: PathBuf, format: &str) -> PyResult<String> {
    let format: ReportFormat = format.parse().map_err(err)?;
    let report = pipeline::load_run_report(&run_dir).map_err(err)?;
    Ok(pipeline::render(&report, format))
}

#[pymodule]
fn ragbias_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("RagbiasError", m.py().get_type::<RagbiasError>())?;
    m.add_class::<PySparseIndex>()?;
    m.add_class::<PyRunConfig>()?;
    m.add_function(wrap_pyfunction!(compute_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(bootstrap_ci, m)?)?;
    m.add_function(wrap_pyfunction!(harmonic_impact, m)?)?;
    m.add_function(wrap_pyfunction!(spearman_rho, m)?)?;
    m.add_function(wrap_pyfunction!(dense_search, m)?)?;
    m.add_function(wrap_pyfunction!(load_run_report, m)?)?;
    m.add_function(wrap_pyfunction!(render_report, m)?)?;
    Ok(())
}
