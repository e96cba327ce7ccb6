//! Multi-hop question composition, decomposition and training-record assembly.

mod compose;
mod records;
mod stats;
pub mod templates;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use compose::{
    attempt_seed, compose_multihop, decompose_multihop, parse_composition, parse_decomposition,
    sample_documents, ComposeConfig, REFUSAL_SENTINEL,
};
pub use records::{
    build_multihop_record, build_singlehop_record, multihop_record_id, singlehop_record_id,
    SingleHopOutcome,
};
pub use stats::{
    accumulate, dataset_stats, thousands, StatsAccumulator, StatsGroups, StatsRow, StatsTable,
};
pub use templates::{PromptTemplate, TemplateError};

use crate::gateway::GatewayError;
use crate::helpfulness::HelpfulnessError;
use crate::propositions::PropositionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParseFailureKind {
    MissingQuestion,
    MissingAnswer,
    MissingBridge,
    MissingSubQuestions,
    MalformedSubQuestion,
    ArityMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind:?}: {detail}")]
pub struct ParseFailure {
    pub kind: ParseFailureKind,
    pub detail: String,
}

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("need {needed} documents, have {available}")]
    InsufficientDocuments { available: usize, needed: usize },
    #[error("hop count must be at least 2, got {0}")]
    InvalidHopCount(usize),
    #[error("generator refused to compose a question")]
    Refusal,
    #[error(transparent)]
    Parse(#[from] ParseFailure),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Helpfulness(#[from] HelpfulnessError),
    #[error(transparent)]
    Propositions(#[from] PropositionError),
    #[error("record construction: {0}")]
    Construction(String),
}
