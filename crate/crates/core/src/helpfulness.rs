//! Likelihood-delta helpfulness.
//!
//! A context unit (document or proposition) is helpful for `(question,
//! answer)` when prepending it strictly raises the scorer's log-likelihood of
//! the answer over the no-context baseline. Helpful propositions are ranked by
//! their conditioned log-likelihood and the top `k` are kept; ties go to the
//! smaller `(doc_id, index)`.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{score_batch, GatewayError, LikelihoodQuery, LogLikelihoodScorer};
use crate::types::{Document, PropRef, Proposition};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HelpfulnessError {
    #[error("baseline scoring failed: {0}")]
    Baseline(GatewayError),
    #[error("no non-empty answer to score")]
    NoAnswer,
    #[error("no documents to filter")]
    NoDocuments,
    #[error("k must be at least 1")]
    InvalidK,
}

/// Which gold answer is the scoring target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnswerMode {
    /// The first non-empty gold answer.
    #[default]
    First,
    /// Every gold answer; an item's delta is its best delta over answers.
    MaxDelta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HelpfulnessConfig {
    pub answer_mode: AnswerMode,
    pub max_in_flight: usize,
}

impl Default for HelpfulnessConfig {
    fn default() -> Self {
        HelpfulnessConfig {
            answer_mode: AnswerMode::First,
            max_in_flight: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScore {
    pub item_id: String,
    pub conditioned_logprob: f64,
    pub delta: f64,
    pub helpful: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelpfulnessReport {
    /// `log p(y | x)` for the first scored answer.
    pub baseline_logprob: f64,
    pub per_item: Vec<ItemScore>,
    /// Helpful item ids, best first, at most `k`.
    pub selected: Vec<String>,
    /// Items whose scoring failed; they are excluded.
    pub unknown: usize,
}

fn targets(answers: &[String], mode: AnswerMode) -> Result<Vec<&str>, HelpfulnessError> {
    let mut non_empty = answers.iter().map(String::as_str).filter(|a| !a.trim().is_empty());
    let out: Vec<&str> = match mode {
        AnswerMode::First => non_empty.next().into_iter().collect(),
        AnswerMode::MaxDelta => non_empty.collect(),
    };
    if out.is_empty() {
        Err(HelpfulnessError::NoAnswer)
    } else {
        Ok(out)
    }
}

/// Per-item `(conditioned, delta)`, `None` where scoring failed.
type ItemDeltas = Vec<Option<(f64, f64)>>;

/// Scores every context against every target answer and returns per-item
/// `(conditioned, delta)` for the best answer, or `None` when scoring failed.
fn score_contexts(
    question: &str,
    answers: &[String],
    contexts: &[String],
    scorer: &dyn LogLikelihoodScorer,
    cfg: &HelpfulnessConfig,
) -> Result<(f64, ItemDeltas), HelpfulnessError> {
    let targets = targets(answers, cfg.answer_mode)?;
    let mut queries = Vec::with_capacity(targets.len() * (contexts.len() + 1));
    for t in &targets {
        queries.push(LikelihoodQuery::new("", question, *t));
        for c in contexts {
            queries.push(LikelihoodQuery::new(c.clone(), question, *t));
        }
    }
    let results = score_batch(scorer, &queries, cfg.max_in_flight);
    let stride = contexts.len() + 1;
    let mut first_baseline = None;
    let mut best: Vec<Option<(f64, f64)>> = vec![None; contexts.len()];
    let mut failed = vec![false; contexts.len()];
    for (ti, block) in results.chunks(stride).enumerate() {
        let baseline = match &block[0] {
            Ok(v) => *v + 0.0,
            Err(e) => return Err(HelpfulnessError::Baseline(e.clone())),
        };
        if ti == 0 {
            first_baseline = Some(baseline);
        }
        for (i, r) in block[1..].iter().enumerate() {
            match r {
                Ok(v) => {
                    let cond = *v + 0.0;
                    let delta = cond - baseline;
                    if best[i].is_none_or(|(_, d)| delta > d) {
                        best[i] = Some((cond, delta));
                    }
                }
                Err(e) => {
                    log::warn!("scoring failed for context {i}: {e}");
                    failed[i] = true;
                }
            }
        }
    }
    for (slot, f) in best.iter_mut().zip(failed) {
        if f {
            *slot = None;
        }
    }
    Ok((first_baseline.expect("at least one target"), best))
}

fn item_scores(
    ids: Vec<String>,
    scores: &[Option<(f64, f64)>],
) -> (Vec<ItemScore>, usize) {
    let mut per_item = Vec::with_capacity(ids.len());
    let mut unknown = 0;
    for (id, s) in ids.into_iter().zip(scores) {
        match s {
            Some((cond, delta)) => per_item.push(ItemScore {
                item_id: id,
                conditioned_logprob: *cond,
                delta: *delta,
                helpful: *delta > 0.0,
            }),
            None => unknown += 1,
        }
    }
    (per_item, unknown)
}

/// Keeps the documents whose prepending raises the answer likelihood, in
/// their original order.
pub fn filter_helpful_documents(
    question: &str,
    answers: &[String],
    docs: &[Document],
    scorer: &dyn LogLikelihoodScorer,
    cfg: &HelpfulnessConfig,
) -> Result<(Vec<Document>, HelpfulnessReport), HelpfulnessError> {
    if docs.is_empty() {
        return Err(HelpfulnessError::NoDocuments);
    }
    let contexts: Vec<String> = docs.iter().map(Document::as_context).collect();
    let (baseline, scores) = score_contexts(question, answers, &contexts, scorer, cfg)?;
    let kept: Vec<Document> = docs
        .iter()
        .zip(&scores)
        .filter(|(_, s)| s.is_some_and(|(_, d)| d > 0.0))
        .map(|(d, _)| d.clone())
        .collect();
    let (per_item, unknown) = item_scores(docs.iter().map(|d| d.id.clone()).collect(), &scores);
    let mut ranked: Vec<&ItemScore> = per_item.iter().filter(|i| i.helpful).collect();
    ranked.sort_by(|a, b| {
        b.conditioned_logprob
            .total_cmp(&a.conditioned_logprob)
            .then_with(|| a.item_id.cmp(&b.item_id))
    });
    let selected = ranked.iter().map(|i| i.item_id.clone()).collect();
    Ok((
        kept,
        HelpfulnessReport {
            baseline_logprob: baseline,
            per_item,
            selected,
            unknown,
        },
    ))
}

/// Heap entry: greater means better (higher likelihood, then smaller key).
#[derive(Debug, PartialEq)]
struct Ranked {
    score: f64,
    key: PropRef,
}

impl Eq for Ranked {}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.key.cmp(&self.key))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Top-`k` helpful propositions, best first. May return fewer than `k`.
pub fn select_helpful_propositions(
    question: &str,
    answers: &[String],
    propositions: &[Proposition],
    k: usize,
    scorer: &dyn LogLikelihoodScorer,
    cfg: &HelpfulnessConfig,
) -> Result<(Vec<PropRef>, HelpfulnessReport), HelpfulnessError> {
    if k == 0 {
        return Err(HelpfulnessError::InvalidK);
    }
    let contexts: Vec<String> = propositions.iter().map(|p| p.text.clone()).collect();
    let (baseline, scores) = score_contexts(question, answers, &contexts, scorer, cfg)?;

    let mut heap: BinaryHeap<Reverse<Ranked>> = BinaryHeap::with_capacity(k + 1);
    for (p, s) in propositions.iter().zip(&scores) {
        let Some((cond, delta)) = *s else { continue };
        if delta <= 0.0 {
            continue;
        }
        heap.push(Reverse(Ranked {
            score: cond,
            key: p.key(),
        }));
        if heap.len() > k {
            heap.pop();
        }
    }
    let selected: Vec<PropRef> = heap.into_sorted_vec().into_iter().map(|Reverse(r)| r.key).collect();

    let (per_item, unknown) = item_scores(propositions.iter().map(|p| p.key().to_string()).collect(), &scores);
    Ok((
        selected.clone(),
        HelpfulnessReport {
            baseline_logprob: baseline,
            per_item,
            selected: selected.iter().map(ToString::to_string).collect(),
            unknown,
        },
    ))
}

/// Reference selection: scores each proposition one by one, sorts the helpful
/// ones and truncates. Items whose scoring fails are skipped.
pub fn brute_force_topk(
    question: &str,
    answer: &str,
    propositions: &[Proposition],
    k: usize,
    scorer: &dyn LogLikelihoodScorer,
) -> Vec<PropRef> {
    let Ok(baseline) = scorer.score(&LikelihoodQuery::new("", question, answer)) else {
        return Vec::new();
    };
    let mut helpful: Vec<(f64, PropRef)> = Vec::new();
    for p in propositions {
        if let Ok(s) = scorer.score(&LikelihoodQuery::new(p.text.clone(), question, answer)) {
            if s > baseline {
                helpful.push((s, p.key()));
            }
        }
    }
    helpful.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.1.cmp(&b.1))
    });
    helpful.truncate(k);
    helpful.into_iter().map(|(_, r)| r).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MockScorer;

    fn ans(a: &str) -> Vec<String> {
        vec![a.to_string()]
    }

    #[test]
    fn filters_documents_by_answer_evidence() {
        let docs = vec![
            Document::new("d1", None, "The Oberoi Group has its head office in Delhi."),
            Document::new("d2", None, "The Oberoi family is an Indian family."),
        ];
        let (kept, report) = filter_helpful_documents(
            "The Oberoi family is part of a hotel company that has a head office in what city?",
            &ans("Delhi"),
            &docs,
            &MockScorer::new(),
            &HelpfulnessConfig::default(),
        )
        .unwrap();
        assert_eq!(kept, vec![docs[0].clone()]);
        assert_eq!(report.baseline_logprob, -1.0);
        assert_eq!(report.per_item[0].delta, 1.0);
        assert!(!report.per_item[1].helpful);
        assert_eq!(report.selected, vec!["d1"]);
    }

    #[test]
    fn zero_delta_is_not_helpful() {
        let docs = vec![Document::new("d", None, "unrelated")];
        let (kept, report) =
            filter_helpful_documents("q?", &ans("x"), &docs, &MockScorer::new(), &Default::default()).unwrap();
        assert!(kept.is_empty());
        assert_eq!(report.per_item[0].delta, 0.0);
    }

    #[test]
    fn no_document_has_the_answer() {
        let docs: Vec<_> = (0..5).map(|i| Document::new(format!("d{i}"), None, format!("filler text {i}"))).collect();
        let (kept, _) =
            filter_helpful_documents("who?", &ans("Ada Lovelace"), &docs, &MockScorer::new(), &Default::default()).unwrap();
        assert!(kept.is_empty());
    }

    #[test]
    fn scoring_failure_marks_unknown() {
        struct FailOn(&'static str);
        impl LogLikelihoodScorer for FailOn {
            fn score(&self, q: &LikelihoodQuery) -> Result<f64, GatewayError> {
                if q.context.contains(self.0) {
                    Err(GatewayError::Transport("down".into()))
                } else {
                    MockScorer::new().score(q)
                }
            }
        }
        let docs = vec![
            Document::new("d1", None, "Delhi BOOM"),
            Document::new("d2", None, "Delhi"),
        ];
        let (kept, report) =
            filter_helpful_documents("q?", &ans("Delhi"), &docs, &FailOn("BOOM"), &Default::default()).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].id, "d2");
        assert_eq!(report.unknown, 1);
    }

    #[test]
    fn max_delta_mode_uses_best_answer() {
        let docs = vec![Document::new("d", None, "Bombay")];
        let answers = vec!["Mumbai".to_string(), "Bombay".to_string()];
        let first = filter_helpful_documents("q?", &answers, &docs, &MockScorer::new(), &Default::default()).unwrap();
        assert!(first.0.is_empty());
        let cfg = HelpfulnessConfig {
            answer_mode: AnswerMode::MaxDelta,
            ..Default::default()
        };
        let max = filter_helpful_documents("q?", &answers, &docs, &MockScorer::new(), &cfg).unwrap();
        assert_eq!(max.0.len(), 1);
    }

    fn props() -> Vec<Proposition> {
        vec![
            Proposition::new("a", 0, "x y z"),
            Proposition::new("a", 1, "x"),
            Proposition::new("b", 0, "nothing"),
        ]
    }

    #[test]
    fn selects_top_k_in_likelihood_order() {
        // Target "x y z": baseline -3, deltas +3, +1, 0.
        let (sel, report) =
            select_helpful_propositions("q?", &ans("x y z"), &props(), 2, &MockScorer::new(), &Default::default()).unwrap();
        assert_eq!(sel, vec![PropRef::new("a", 0), PropRef::new("a", 1)]);
        assert_eq!(report.selected, vec!["a:0", "a:1"]);
        let (sel, _) =
            select_helpful_propositions("q?", &ans("x y z"), &props(), 10, &MockScorer::new(), &Default::default()).unwrap();
        assert_eq!(sel.len(), 2);
    }

    #[test]
    fn ties_break_on_key() {
        let ps = vec![
            Proposition::new("b", 0, "Delhi"),
            Proposition::new("a", 3, "Delhi"),
            Proposition::new("a", 1, "in Delhi"),
        ];
        let (sel, _) =
            select_helpful_propositions("q?", &ans("Delhi"), &ps, 2, &MockScorer::new(), &Default::default()).unwrap();
        assert_eq!(sel, vec![PropRef::new("a", 1), PropRef::new("a", 3)]);
        assert_eq!(sel, brute_force_topk("q?", "Delhi", &ps, 2, &MockScorer::new()));
    }

    #[test]
    fn k_one_and_empty() {
        let ps = vec![Proposition::new("a", 0, "Delhi")];
        let (sel, _) = select_helpful_propositions("q?", &ans("Delhi"), &ps, 1, &MockScorer::new(), &Default::default()).unwrap();
        assert_eq!(sel, vec![PropRef::new("a", 0)]);
        assert!(brute_force_topk("q?", "Delhi", &[], 3, &MockScorer::new()).is_empty());
        assert_eq!(
            select_helpful_propositions("q?", &ans("Delhi"), &ps, 0, &MockScorer::new(), &Default::default()),
            Err(HelpfulnessError::InvalidK)
        );
    }
}
