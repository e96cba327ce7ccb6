//! End-to-end orchestration of the synthesis and evaluation flows.

mod checkpoint;
pub mod config;
mod eval;
mod ledger;
mod merge;
mod synthesize;

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use thiserror::Error;

pub use checkpoint::Checkpoint;
pub use config::{resolve_endpoint, EndpointOverrides, FileConfig};
pub use eval::{
    compress_examples, evaluate_predictions, run_eval, CompressedRow, EvalConfig, EvalOutput,
    PredictionRow, Reader, ReaderRows, SummarySource,
};
pub use ledger::Ledger;
pub use merge::{build_unified_dataset, to_seq2seq, Seq2SeqPair};
pub use synthesis_exports::*;

mod synthesis_exports {
    pub use super::synthesize::{
        process_example, run_synthesis, score_examples, write_synthesis_outputs, CandidateLog,
        ExampleOutcome, RunOptions, ScoreRow, StageCalls, SynthesisBackends, SynthesisConfig,
        SynthesisReport, SynthesisRun,
    };
}

use crate::jsonl::{read_jsonl, JsonlError};
use crate::types::{Document, RetrievedSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("io: {0}")]
    Io(String),
    #[error("endpoint: {0}")]
    Endpoint(String),
    #[error("stopped after {completed} examples; rerun with the same checkpoint to resume")]
    Interrupted { completed: usize },
}

impl PipelineError {
    /// Process exit status: 1 usage or config, 2 data, 3 endpoint.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 1,
            PipelineError::Data(_) | PipelineError::Io(_) => 2,
            PipelineError::Endpoint(_) => 3,
            PipelineError::Interrupted { .. } => 0,
        }
    }
}

impl From<JsonlError> for PipelineError {
    fn from(e: JsonlError) -> Self {
        match e {
            JsonlError::Io { .. } => PipelineError::Io(e.to_string()),
            _ => PipelineError::Data(e.to_string()),
        }
    }
}

/// Reads a whole JSONL file.
pub fn load_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    Ok(read_jsonl(path)?)
}

/// Retrieval file as a map from question id to its documents.
pub fn index_retrieval(sets: Vec<RetrievedSet>) -> Result<HashMap<String, Vec<Document>>, PipelineError> {
    let mut out = HashMap::with_capacity(sets.len());
    for s in sets {
        if out.insert(s.question_id.clone(), s.documents).is_some() {
            return Err(PipelineError::Data(format!("duplicate retrieval entry for {}", s.question_id)));
        }
    }
    Ok(out)
}

/// Runs `work` over `0..n` on a bounded pool; results come back by index.
/// `work` may return `None` to skip an index.
pub(crate) fn run_pool<R: Send>(n: usize, workers: usize, work: impl Fn(usize) -> Option<R> + Sync) -> Vec<Option<R>> {
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..n).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, n.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                if let Some(r) = work(i) {
                    slots.lock().expect("pool lock poisoned")[i] = Some(r);
                }
            });
        }
    });
    slots.into_inner().expect("pool lock poisoned")
}
