use std::collections::{HashMap, HashSet};

use super::SynthesisError;
use crate::gateway::LogLikelihoodScorer;
use crate::helpfulness::{
    filter_helpful_documents, select_helpful_propositions, HelpfulnessConfig, HelpfulnessReport,
};
use crate::propositions::PropositionStore;
use crate::types::{Document, MultiHopCandidate, PropRef, Proposition, QAExample, SummaryRecord};

pub fn multihop_record_id(seed_id: &str, hops: u32, attempt: u32) -> String {
    format!("{seed_id}-h{hops}-a{attempt}")
}

pub fn singlehop_record_id(seed_id: &str, hops: u32) -> String {
    format!("{seed_id}-h{hops}")
}

/// Assembles the training record of a validated candidate. `documents` is
/// the full retrieved set; `propositions` must contain every supporting
/// proposition.
pub fn build_multihop_record(
    id: impl Into<String>,
    candidate: &MultiHopCandidate,
    documents: &[Document],
    propositions: &[Proposition],
) -> Result<SummaryRecord, SynthesisError> {
    let id = id.into();
    let by_key: HashMap<PropRef, &str> = propositions.iter().map(|p| (p.key(), p.text.as_str())).collect();
    if candidate.sub_questions.len() != candidate.hop_count as usize {
        return Err(SynthesisError::Construction(format!(
            "{id}: {} sub-questions for {} hops",
            candidate.sub_questions.len(),
            candidate.hop_count
        )));
    }
    let mut provenance = Vec::with_capacity(candidate.sub_questions.len());
    let mut texts = Vec::with_capacity(candidate.sub_questions.len());
    let mut seen_docs = HashSet::new();
    for sq in &candidate.sub_questions {
        let p = sq.supporting_proposition.as_ref().ok_or_else(|| {
            SynthesisError::Construction(format!("{id}: sub-question {:?} has no support", sq.text))
        })?;
        if !seen_docs.insert(p.doc_id.as_str()) {
            return Err(SynthesisError::Construction(format!(
                "{id}: document {} supports two sub-questions",
                p.doc_id
            )));
        }
        let text = by_key
            .get(p)
            .ok_or_else(|| SynthesisError::Construction(format!("{id}: unknown proposition {p}")))?;
        provenance.push(p.clone());
        texts.push(*text);
    }
    Ok(SummaryRecord {
        id,
        question: candidate.question.clone(),
        documents: documents.to_vec(),
        summary: texts.join(" "),
        hop_count: candidate.hop_count,
        provenance,
        source: None,
    })
}

/// A seed-derived record together with the scoring that produced it.
#[derive(Debug, Clone)]
pub struct SingleHopOutcome {
    pub record: SummaryRecord,
    pub document_report: HelpfulnessReport,
    pub proposition_report: Option<HelpfulnessReport>,
}

impl SingleHopOutcome {
    /// No helpful evidence: the record teaches the compressor to emit nothing.
    pub fn is_empty(&self) -> bool {
        self.record.summary.is_empty()
    }
}

/// Builds the record for a seed question: the top-`k` helpful propositions of
/// its helpful documents, or an empty summary when nothing helps. Seeds that
/// are themselves multi-hop keep at most one proposition per document.
pub fn build_singlehop_record(
    example: &QAExample,
    documents: &[Document],
    k: usize,
    store: &dyn PropositionStore,
    scorer: &dyn LogLikelihoodScorer,
    cfg: &HelpfulnessConfig,
) -> Result<SingleHopOutcome, SynthesisError> {
    let id = singlehop_record_id(&example.id, example.hop_count);
    let (helpful_docs, document_report) =
        filter_helpful_documents(&example.question, &example.answers, documents, scorer, cfg)?;

    let mut provenance = Vec::new();
    let mut texts = Vec::new();
    let mut proposition_report = None;
    if !helpful_docs.is_empty() {
        let mut pool = Vec::new();
        for d in &helpful_docs {
            pool.extend(store.propositions(d)?);
        }
        if !pool.is_empty() {
            let distinct = example.hop_count >= 2;
            let want = if distinct { pool.len() } else { k.max(1) };
            let (ranked, report) =
                select_helpful_propositions(&example.question, &example.answers, &pool, want, scorer, cfg)?;
            let texts_by_key: HashMap<PropRef, &str> =
                pool.iter().map(|p| (p.key(), p.text.as_str())).collect();
            let mut used_docs = HashSet::new();
            for r in ranked {
                if provenance.len() == k {
                    break;
                }
                if distinct && !used_docs.insert(r.doc_id.clone()) {
                    continue;
                }
                texts.push(texts_by_key[&r].to_string());
                provenance.push(r);
            }
            proposition_report = Some(report);
        }
    }
    let record = SummaryRecord {
        id,
        question: example.question.clone(),
        documents: documents.to_vec(),
        summary: texts.join(" "),
        hop_count: example.hop_count,
        provenance,
        source: None,
    };
    Ok(SingleHopOutcome {
        record,
        document_report,
        proposition_report,
    })
}
