//! Python bindings. Structured values cross the boundary as plain dicts and
//! lists, converted through the `json` module.

use std::collections::HashMap;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use hopsum_core::compression::{self, CompressConfig};
use hopsum_core::fixtures::SyntheticWorld;
use hopsum_core::gateway::{connect_generator, connect_scorer, EndpointConfig};
use hopsum_core::metrics::{self, Rate, RateMode};
use hopsum_core::pipeline::{
    build_unified_dataset, evaluate_predictions, index_retrieval, run_synthesis, PipelineError, PredictionRow,
    RunOptions, SynthesisBackends, SynthesisConfig,
};
use hopsum_core::synthesis::dataset_stats;
use hopsum_core::validation::distinct_assignment;
use hopsum_core::{Document, QAExample, RandomSeed, RetrievedSet, SummaryRecord};

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn pipeline_err(e: PipelineError) -> PyErr {
    match e {
        PipelineError::Config(m) | PipelineError::Data(m) => PyValueError::new_err(m),
        PipelineError::Io(m) => PyIOError::new_err(m),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn rate_mode(name: &str) -> PyResult<RateMode> {
    match name {
        "corpus" => Ok(RateMode::Corpus),
        "row-mean" => Ok(RateMode::RowMean),
        _ => Err(PyValueError::new_err(format!("unknown rate mode {name:?}; use corpus or row-mean"))),
    }
}

fn endpoint(url: &str, model: Option<&str>) -> EndpointConfig {
    EndpointConfig::http(url, model.unwrap_or("default"))
}

#[pyfunction]
fn normalize_answer(text: &str) -> String {
    metrics::normalize_answer(text)
}

#[pyfunction]
fn exact_match(prediction: &str, answers: Vec<String>) -> bool {
    metrics::exact_match(prediction, &answers)
}

#[pyfunction]
fn token_f1(prediction: &str, answers: Vec<String>) -> f64 {
    metrics::token_f1(prediction, &answers)
}

/// Input words over output words; None when the summary is empty.
#[pyfunction]
fn compression_rate(input_words: usize, output_words: usize) -> PyResult<Option<f64>> {
    match metrics::compression_rate(input_words, output_words) {
        Ok(Rate::Value(v)) => Ok(Some(v)),
        Ok(Rate::NotApplicable) => Ok(None),
        Err(e) => Err(PyValueError::new_err(e.to_string())),
    }
}

/// Scores prediction rows and returns (rows, report).
#[pyfunction]
#[pyo3(signature = (rows, label = "predictions", rate_mode = "corpus"))]
fn evaluate<'py>(
    py: Python<'py>,
    rows: &Bound<'py, PyAny>,
    label: &str,
    rate_mode: &str,
) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyAny>)> {
    let rows: Vec<PredictionRow> = from_py(rows)?;
    let (scored, report) = evaluate_predictions(&rows, label, self::rate_mode(rate_mode)?);
    Ok((to_py(py, &scored)?, to_py(py, &report)?))
}

/// For each list of candidates, the index of a pick such that all picks are
/// distinct, or None if no such choice exists.
#[pyfunction]
fn distinct_pick(sets: Vec<Vec<String>>) -> Option<Vec<usize>> {
    distinct_assignment(&sets)
}

#[pyfunction]
fn sentence_split(text: &str) -> Vec<String> {
    hopsum_core::propositions::sentence_split(text)
}

/// Shuffles documents with `seed` and cuts them into chunks.
#[pyfunction]
fn shuffle_chunks<'py>(
    py: Python<'py>,
    documents: &Bound<'py, PyAny>,
    chunk_size: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let docs: Vec<Document> = from_py(documents)?;
    let chunks = compression::shuffle_chunks(&docs, chunk_size, RandomSeed::new(seed))
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    to_py(py, &chunks)
}

/// The compressor input text for a question and its documents.
#[pyfunction]
fn compressor_input(question: &str, documents: &Bound<'_, PyAny>) -> PyResult<String> {
    let docs: Vec<Document> = from_py(documents)?;
    Ok(compression::compressor_input(question, &docs))
}

/// Compresses documents for a question with the endpoint at `url`
/// (`mock://world` for the offline fixture).
#[pyfunction]
#[pyo3(signature = (question, documents, url, model = None))]
fn compress(py: Python<'_>, question: &str, documents: &Bound<'_, PyAny>, url: &str, model: Option<&str>) -> PyResult<String> {
    let docs: Vec<Document> = from_py(documents)?;
    let generator = connect_generator(&endpoint(url, model)).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let question = question.to_string();
    py.detach(move || compression::compress(&question, &docs, &generator, &CompressConfig::default()))
        .map(|r| r.summary)
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// A deterministic synthetic corpus: {"examples", "eval_examples", "retrieval"}.
#[pyfunction]
#[pyo3(signature = (seeds, seed = 42))]
fn synthetic_world(py: Python<'_>, seeds: usize, seed: u64) -> PyResult<Bound<'_, PyAny>> {
    let w = SyntheticWorld::generate(seeds, RandomSeed::new(seed));
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("examples", to_py(py, &w.examples)?)?;
    dict.set_item("eval_examples", to_py(py, &w.eval_examples)?)?;
    dict.set_item("retrieval", to_py(py, &w.retrieval)?)?;
    Ok(dict.into_any())
}

/// Runs synthesis and returns {"records", "report"}. `config` takes the same
/// keys as the `[synthesis]` table of the config file. The composer and
/// propositionizer share `generator_url`; the scorer uses `scorer_url`.
#[pyfunction]
#[pyo3(signature = (examples, retrieval, config = None, generator_url = "mock://world", scorer_url = "mock://", model = None, workers = 4))]
#[allow(clippy::too_many_arguments)]
fn synthesize<'py>(
    py: Python<'py>,
    examples: &Bound<'py, PyAny>,
    retrieval: &Bound<'py, PyAny>,
    config: Option<&Bound<'py, PyAny>>,
    generator_url: &str,
    scorer_url: &str,
    model: Option<&str>,
    workers: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let examples: Vec<QAExample> = from_py(examples)?;
    let sets: Vec<RetrievedSet> = from_py(retrieval)?;
    let cfg: SynthesisConfig = match config {
        Some(c) => from_py(c)?,
        None => SynthesisConfig::default(),
    };
    let retrieval: HashMap<String, Vec<Document>> = index_retrieval(sets).map_err(pipeline_err)?;
    let gen = connect_generator(&endpoint(generator_url, model)).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let scorer = connect_scorer(&endpoint(scorer_url, model)).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let backends = SynthesisBackends::new(gen.clone(), gen, scorer, None);
    let opts = RunOptions {
        workers,
        ..Default::default()
    };
    let run = py
        .detach(move || run_synthesis(&examples, &retrieval, &cfg, &backends, &opts))
        .map_err(pipeline_err)?;
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("records", to_py(py, &run.records)?)?;
    dict.set_item("report", to_py(py, &run.report)?)?;
    Ok(dict.into_any())
}

/// Merges labelled record lists; returns (records, stats rows).
#[pyfunction]
fn merge<'py>(py: Python<'py>, sources: Vec<(String, Bound<'py, PyAny>)>) -> PyResult<(Bound<'py, PyAny>, Bound<'py, PyAny>)> {
    let sources = sources
        .iter()
        .map(|(label, rows)| Ok((label.clone(), from_py::<Vec<SummaryRecord>>(rows)?)))
        .collect::<PyResult<Vec<_>>>()?;
    let (merged, stats) = build_unified_dataset(sources).map_err(pipeline_err)?;
    Ok((to_py(py, &merged)?, to_py(py, &stats.rows)?))
}

/// The per-source, per-hop statistics table as text.
#[pyfunction]
#[pyo3(signature = (records, default_source = "unknown"))]
fn stats_table(records: &Bound<'_, PyAny>, default_source: &str) -> PyResult<String> {
    let records: Vec<SummaryRecord> = from_py(records)?;
    Ok(dataset_stats(&records, default_source).render_text())
}

/// Checks a record's structural invariants; raises ValueError on violation.
#[pyfunction]
fn check_record(record: &Bound<'_, PyAny>) -> PyResult<()> {
    let r: SummaryRecord = from_py(record)?;
    r.check_invariants(None).map_err(PyValueError::new_err)
}

#[pymodule]
fn hopsum(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(normalize_answer, m)?)?;
    m.add_function(wrap_pyfunction!(exact_match, m)?)?;
    m.add_function(wrap_pyfunction!(token_f1, m)?)?;
    m.add_function(wrap_pyfunction!(compression_rate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(distinct_pick, m)?)?;
    m.add_function(wrap_pyfunction!(sentence_split, m)?)?;
    m.add_function(wrap_pyfunction!(shuffle_chunks, m)?)?;
    m.add_function(wrap_pyfunction!(compressor_input, m)?)?;
    m.add_function(wrap_pyfunction!(compress, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_world, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(merge, m)?)?;
    m.add_function(wrap_pyfunction!(stats_table, m)?)?;
    m.add_function(wrap_pyfunction!(check_record, m)?)?;
    Ok(())
}
