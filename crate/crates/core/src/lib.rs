//! Multi-hop compression data synthesis and query-aware compressor evaluation.
//!
//! The crate is organised by pipeline stage:
//!
//! - [`types`], [`text`], [`jsonl`], [`seed`]: shared value types and plumbing.
//! - [`gateway`]: generation and log-likelihood scoring backends (HTTP and mock).
//! - [`propositions`]: document segmentation into atomic propositions.
//! - [`helpfulness`]: likelihood-delta filtering and top-k selection.
//! - [`synthesis`]: multi-hop composition, decomposition and record assembly.
//! - [`validation`]: heuristic multi-hop checks and distinct-document matching.
//! - [`compression`]: compressor calls, chunking and reader prompts.
//! - [`metrics`]: EM, F1, compression rate and aggregate reports.
//! - [`fixtures`]: a deterministic synthetic world and scripted backends for
//!   offline runs.
//! - [`pipeline`]: end-to-end orchestration, checkpoints and the rejection ledger.

pub mod compression;
pub mod fixtures;
pub mod gateway;
pub mod helpfulness;
pub mod jsonl;
pub mod metrics;
pub mod pipeline;
pub mod propositions;
pub mod seed;
pub mod synthesis;
pub mod text;
pub mod types;
pub mod validation;

pub use seed::RandomSeed;
pub use types::{
    Document, MultiHopCandidate, PropRef, Proposition, QAExample, RetrievedSet, SubQuestion,
    SummaryRecord,
};
