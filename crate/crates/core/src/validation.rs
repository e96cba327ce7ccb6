//! Heuristic checks that a composed question really needs several hops.
//!
//! Checks run cheapest first and the first failure wins:
//!
//! 1. the answer is not a bridge entity;
//! 2. no bridge entity appears in the question;
//! 3. the sub-questions chain through their answers to the final answer;
//! 4. every sub-question is supported by a helpful proposition, and the
//!    supports can be drawn from pairwise distinct documents.
//!
//! Only the last check talks to the scorer.

use std::collections::{BTreeMap, HashMap};

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::gateway::LogLikelihoodScorer;
use crate::helpfulness::{filter_helpful_documents, select_helpful_propositions, HelpfulnessConfig};
use crate::propositions::PropositionStore;
use crate::types::{Document, MultiHopCandidate, Proposition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ValidationReason {
    Accepted,
    GroundTruthIsBridge,
    BridgeInQuestion,
    NoReasoningChain,
    SubQuestionUnsupported,
    SameDocumentEvidence,
    ParseFailure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationVerdict {
    pub accepted: bool,
    pub reason: ValidationReason,
    pub detail: String,
}

impl ValidationVerdict {
    pub fn accept() -> Self {
        ValidationVerdict {
            accepted: true,
            reason: ValidationReason::Accepted,
            detail: String::new(),
        }
    }

    pub fn reject(reason: ValidationReason, detail: impl Into<String>) -> Self {
        debug_assert!(reason != ValidationReason::Accepted);
        ValidationVerdict {
            accepted: false,
            reason,
            detail: detail.into(),
        }
    }
}

const ARTICLES: [&str; 3] = ["a", "an", "the"];

/// Lowercase, strip quotes and punctuation, collapse whitespace and drop
/// leading articles.
pub fn normalize_entity(s: &str) -> String {
    let lowered = s.to_lowercase();
    let stripped: String = lowered
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    let tokens: Vec<&str> = stripped.split_whitespace().collect();
    let start = tokens.iter().take_while(|t| ARTICLES.contains(t)).count();
    tokens[start..].join(" ")
}

/// Whether normalized `needle` occurs in normalized `haystack` on token
/// boundaries.
pub fn contains_entity(haystack: &str, needle: &str) -> bool {
    let h = normalize_entity(haystack);
    let n = normalize_entity(needle);
    if n.is_empty() {
        return false;
    }
    let padded = format!(" {h} ");
    padded.contains(&format!(" {n} "))
}

pub fn check_bridge_not_answer(c: &MultiHopCandidate) -> bool {
    let answer = normalize_entity(&c.answer);
    !c.bridge_entities.iter().any(|b| normalize_entity(b) == answer)
}

pub fn check_bridge_not_in_question(c: &MultiHopCandidate) -> bool {
    !c.bridge_entities.iter().any(|b| contains_entity(&c.question, b))
}

/// Some ordering of the sub-questions starts at the one answered by the
/// final answer and continues so that each next sub-question's answer is
/// mentioned in the previous sub-question.
pub fn check_reasoning_chain(c: &MultiHopCandidate) -> bool {
    let subs = &c.sub_questions;
    if subs.len() < 2 {
        return false;
    }
    let answer = normalize_entity(&c.answer);
    subs.iter().enumerate().permutations(subs.len()).any(|order| {
        normalize_entity(&order[0].1.answer) == answer
            && order
                .windows(2)
                .all(|w| contains_entity(&w[0].1.text, &w[1].1.answer))
    })
}

/// A system of distinct representatives: for each set, the position of the
/// chosen element, such that no element is chosen twice. Sets are tried in
/// their given order, so earlier elements are preferred.
pub fn distinct_assignment<T: Eq + std::hash::Hash + Clone>(sets: &[Vec<T>]) -> Option<Vec<usize>> {
    let mut owner: HashMap<T, usize> = HashMap::new();
    for i in 0..sets.len() {
        let mut visited = vec![false; sets.len()];
        if !augment(i, sets, &mut owner, &mut visited) {
            return None;
        }
    }
    let mut out = vec![0; sets.len()];
    for (item, set_idx) in &owner {
        out[*set_idx] = sets[*set_idx].iter().position(|x| x == item).expect("owned item is in its set");
    }
    Some(out)
}

fn augment<T: Eq + std::hash::Hash + Clone>(
    i: usize,
    sets: &[Vec<T>],
    owner: &mut HashMap<T, usize>,
    visited: &mut [bool],
) -> bool {
    if visited[i] {
        return false;
    }
    visited[i] = true;
    for item in &sets[i] {
        let free = match owner.get(item) {
            None => true,
            Some(&j) => augment(j, sets, owner, visited),
        };
        if free {
            owner.insert(item.clone(), i);
            return true;
        }
    }
    false
}

/// Per sub-question helpful propositions, best first, drawn from the
/// documents that help answer it.
fn helpful_support(
    question: &str,
    answer: &str,
    documents: &[Document],
    store: &dyn PropositionStore,
    scorer: &dyn LogLikelihoodScorer,
    cfg: &HelpfulnessConfig,
) -> Vec<Proposition> {
    let answers = [answer.to_string()];
    let Ok((docs, _)) = filter_helpful_documents(question, &answers, documents, scorer, cfg) else {
        return Vec::new();
    };
    let mut pool = Vec::new();
    for d in &docs {
        match store.propositions(d) {
            Ok(p) => pool.extend(p),
            Err(e) => log::warn!("no propositions for {}: {e}", d.id),
        }
    }
    if pool.is_empty() {
        return Vec::new();
    }
    let Ok((ranked, _)) = select_helpful_propositions(question, &answers, &pool, pool.len(), scorer, cfg) else {
        return Vec::new();
    };
    let by_key: HashMap<_, _> = pool.iter().map(|p| (p.key(), p)).collect();
    ranked.iter().map(|r| by_key[r].clone()).collect()
}

/// Outcome of the support check: one proposition per sub-question on
/// success.
pub fn check_support_and_distinctness(
    c: &MultiHopCandidate,
    documents: &[Document],
    store: &dyn PropositionStore,
    scorer: &dyn LogLikelihoodScorer,
    cfg: &HelpfulnessConfig,
) -> Result<Vec<Proposition>, ValidationVerdict> {
    let mut supports = Vec::with_capacity(c.sub_questions.len());
    for (i, sq) in c.sub_questions.iter().enumerate() {
        let s = helpful_support(&sq.text, &sq.answer, documents, store, scorer, cfg);
        if s.is_empty() {
            return Err(ValidationVerdict::reject(
                ValidationReason::SubQuestionUnsupported,
                format!("sub-question {} has no helpful proposition", i + 1),
            ));
        }
        supports.push(s);
    }
    // candidate documents per sub-question, ordered by their best proposition
    let doc_sets: Vec<Vec<&str>> = supports
        .iter()
        .map(|s| s.iter().map(|p| p.doc_id.as_str()).unique().collect())
        .collect();
    let Some(choice) = distinct_assignment(&doc_sets) else {
        return Err(ValidationVerdict::reject(
            ValidationReason::SameDocumentEvidence,
            "supporting propositions cannot come from distinct documents",
        ));
    };
    Ok(supports
        .iter()
        .zip(&doc_sets)
        .zip(choice)
        .map(|((s, docs), pick)| {
            s.iter()
                .find(|p| p.doc_id == docs[pick])
                .expect("chosen document has a proposition")
                .clone()
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct ValidationOutcome {
    pub verdict: ValidationVerdict,
    /// The candidate with supporting propositions bound, when accepted.
    pub candidate: Option<MultiHopCandidate>,
    /// Supporting propositions in sub-question order, when accepted.
    pub supporting: Vec<Proposition>,
}

pub fn validate(
    c: &MultiHopCandidate,
    documents: &[Document],
    store: &dyn PropositionStore,
    scorer: &dyn LogLikelihoodScorer,
    cfg: &HelpfulnessConfig,
) -> ValidationOutcome {
    let reject = |verdict| ValidationOutcome {
        verdict,
        candidate: None,
        supporting: Vec::new(),
    };
    if c.sub_questions.len() != c.hop_count as usize || c.bridge_entities.is_empty() {
        return reject(ValidationVerdict::reject(
            ValidationReason::ParseFailure,
            format!("{} sub-questions for {} hops", c.sub_questions.len(), c.hop_count),
        ));
    }
    if !check_bridge_not_answer(c) {
        return reject(ValidationVerdict::reject(
            ValidationReason::GroundTruthIsBridge,
            format!("answer {:?} is a bridge entity", c.answer),
        ));
    }
    if !check_bridge_not_in_question(c) {
        return reject(ValidationVerdict::reject(
            ValidationReason::BridgeInQuestion,
            "a bridge entity appears in the question",
        ));
    }
    if !check_reasoning_chain(c) {
        return reject(ValidationVerdict::reject(
            ValidationReason::NoReasoningChain,
            "no ordering of sub-questions chains to the answer",
        ));
    }
    match check_support_and_distinctness(c, documents, store, scorer, cfg) {
        Err(v) => reject(v),
        Ok(supporting) => {
            let mut bound = c.clone();
            for (sq, p) in bound.sub_questions.iter_mut().zip(&supporting) {
                sq.supporting_proposition = Some(p.key());
            }
            ValidationOutcome {
                verdict: ValidationVerdict::accept(),
                candidate: Some(bound),
                supporting,
            }
        }
    }
}

/// Outcome counts keyed by reason. Merging is a plain sum.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictTally(pub BTreeMap<ValidationReason, usize>);

impl VerdictTally {
    pub fn record(&mut self, reason: ValidationReason) {
        *self.0.entry(reason).or_default() += 1;
    }

    pub fn merge(&mut self, other: &VerdictTally) {
        for (k, v) in &other.0 {
            *self.0.entry(*k).or_default() += v;
        }
    }

    pub fn total(&self) -> usize {
        self.0.values().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MockScorer;
    use crate::types::SubQuestion;
    use proptest::prelude::*;

    #[test]
    fn normalization() {
        assert_eq!(normalize_entity("\"The Sentinel\""), "sentinel");
        assert_eq!(normalize_entity("angola."), "angola");
        assert_eq!(normalize_entity("  Arthur's   Magazine "), "arthurs magazine");
        assert!(contains_entity("What is the capital of Angola?", "Angola"));
        assert!(!contains_entity("Is it USual?", "US"));
        assert!(!contains_entity("anything", "\"\""));
    }

    fn candidate(answer: &str, bridge: &str, question: &str, subs: &[(&str, &str)]) -> MultiHopCandidate {
        MultiHopCandidate {
            seed_id: "s".into(),
            question: question.into(),
            answer: answer.into(),
            sub_questions: subs.iter().map(|(q, a)| SubQuestion::new(*q, *a)).collect(),
            bridge_entities: vec![bridge.into()],
            sampled_doc_ids: (0..subs.len()).map(|i| format!("d{i}")).collect(),
            hop_count: subs.len() as u32,
        }
    }

    fn angola() -> MultiHopCandidate {
        candidate(
            "11 November 1975",
            "Angola",
            "What is the independence date of the country where the majority of the population is composed of Ambundu, Ovimbundu, and Bakongo peoples?",
            &[
                ("What is the independence date of Angola?", "11 November 1975"),
                ("What country has a majority population of Ambundu, Ovimbundu, and Bakongo peoples?", "Angola"),
            ],
        )
    }

    #[test]
    fn string_checks_on_the_angola_example() {
        let c = angola();
        assert!(check_bridge_not_answer(&c));
        assert!(check_bridge_not_in_question(&c));
        assert!(check_reasoning_chain(&c));

        let mut bad = c.clone();
        bad.answer = "Angola".into();
        assert!(!check_bridge_not_answer(&bad));
        bad.answer = "angola.".into();
        assert!(!check_bridge_not_answer(&bad));

        let mut named = c.clone();
        named.question = "What is the independence date of Angola?".into();
        assert!(!check_bridge_not_in_question(&named));

        let mut unrelated = c.clone();
        unrelated.sub_questions[1].answer = "Portugal".into();
        assert!(!check_reasoning_chain(&unrelated));
    }

    #[test]
    fn three_hop_chain() {
        let c = MultiHopCandidate {
            bridge_entities: vec!["Zorvan".into(), "Quell".into()],
            ..candidate(
                "Mirabel",
                "",
                "Who founded the capital of the home of Tarsk?",
                &[
                    ("What is the home of Tarsk?", "Quell"),
                    ("Who founded Zorvan?", "Mirabel"),
                    ("What is the capital of Quell?", "Zorvan"),
                ],
            )
        };
        assert!(check_reasoning_chain(&c));
        let mut broken = c.clone();
        broken.sub_questions[2].answer = "Ostrava".into();
        assert!(!check_reasoning_chain(&broken));
    }

    #[test]
    fn matching_prefers_listed_order_and_is_exact() {
        let sets = vec![vec!["A", "B"], vec!["B"]];
        assert_eq!(distinct_assignment(&sets), Some(vec![0, 0]));
        let sets = vec![vec!["B"], vec!["B"]];
        assert_eq!(distinct_assignment(&sets), None);
        let empty: Vec<Vec<&str>> = vec![];
        assert_eq!(distinct_assignment(&empty), Some(vec![]));
    }

    fn exhaustive(sets: &[Vec<u8>]) -> bool {
        fn go(i: usize, sets: &[Vec<u8>], used: &mut Vec<u8>) -> bool {
            if i == sets.len() {
                return true;
            }
            for x in &sets[i] {
                if !used.contains(x) {
                    used.push(*x);
                    if go(i + 1, sets, used) {
                        return true;
                    }
                    used.pop();
                }
            }
            false
        }
        go(0, sets, &mut Vec::new())
    }

    proptest! {
        #[test]
        fn matcher_agrees_with_exhaustive_search(sets in proptest::collection::vec(proptest::collection::vec(0u8..5, 0..4), 1..5)) {
            let sets: Vec<Vec<u8>> = sets.into_iter().map(|s| s.into_iter().unique().collect()).collect();
            let got = distinct_assignment(&sets);
            prop_assert_eq!(got.is_some(), exhaustive(&sets));
            if let Some(choice) = got {
                let picked: Vec<u8> = sets.iter().zip(&choice).map(|(s, i)| s[*i]).collect();
                prop_assert_eq!(picked.iter().unique().count(), picked.len());
            }
        }

        #[test]
        fn normalization_is_idempotent(s in "\\PC{0,40}") {
            let once = normalize_entity(&s);
            prop_assert_eq!(normalize_entity(&once), once.clone());
        }
    }

    fn angola_world() -> (Vec<Document>, HashMap<String, Vec<Proposition>>) {
        let docs = vec![
            Document::new("n1", None, "Portugal left a country whose population was mainly Ambundu, Ovimbundu, and Bakongo peoples. That country is Angola."),
            Document::new("n2", None, "The Alvor Agreement set Angola's independence date for 11 November 1975."),
            Document::new("n3", None, "Unrelated filler text."),
        ];
        let mut store = HashMap::new();
        store.insert("n1".to_string(), vec![
            Proposition::new("n1", 0, "Portugal left a country whose population was mainly Ambundu, Ovimbundu, and Bakongo peoples."),
            Proposition::new("n1", 1, "That country is Angola."),
        ]);
        store.insert("n2".to_string(), vec![
            Proposition::new("n2", 0, "The Alvor Agreement set Angola's independence date for 11 November 1975."),
        ]);
        store.insert("n3".to_string(), vec![Proposition::new("n3", 0, "Unrelated filler text.")]);
        (docs, store)
    }

    #[test]
    fn angola_is_accepted_with_distinct_support() {
        let (docs, store) = angola_world();
        let out = validate(&angola(), &docs, &store, &MockScorer::new(), &HelpfulnessConfig::default());
        assert_eq!(out.verdict.reason, ValidationReason::Accepted, "{}", out.verdict.detail);
        assert!(out.verdict.accepted);
        let docs_used: Vec<_> = out.supporting.iter().map(|p| p.doc_id.as_str()).collect();
        assert_eq!(docs_used, vec!["n2", "n1"]);
        let bound = out.candidate.unwrap();
        assert!(bound.sub_questions.iter().all(|s| s.supporting_proposition.is_some()));
    }

    #[test]
    fn single_document_support_is_rejected() {
        let (docs, mut store) = angola_world();
        // both facts only in n1
        let mut merged = store["n1"].clone();
        merged.push(Proposition::new("n1", 2, "The independence date was 11 November 1975."));
        store.insert("n1".into(), merged);
        store.insert("n2".into(), vec![]);
        let docs: Vec<Document> = docs
            .into_iter()
            .map(|d| if d.id == "n2" { Document::new("n2", None, "Nothing here.") } else if d.id == "n1" {
                Document::new("n1", None, format!("{} The independence date was 11 November 1975.", d.text))
            } else { d })
            .collect();
        let out = validate(&angola(), &docs, &store, &MockScorer::new(), &HelpfulnessConfig::default());
        assert_eq!(out.verdict.reason, ValidationReason::SameDocumentEvidence);
    }

    #[test]
    fn unsupported_sub_question() {
        let (docs, mut store) = angola_world();
        store.insert("n2".into(), vec![Proposition::new("n2", 0, "The agreement was signed.")]);
        let out = validate(&angola(), &docs, &store, &MockScorer::new(), &HelpfulnessConfig::default());
        assert_eq!(out.verdict.reason, ValidationReason::SubQuestionUnsupported);
    }

    #[test]
    fn cheap_failures_make_no_scoring_calls() {
        let (docs, store) = angola_world();
        let scorer = MockScorer::new();
        let mut c = angola();
        c.question = "When did Angola become independent?".into();
        let out = validate(&c, &docs, &store, &scorer, &HelpfulnessConfig::default());
        assert_eq!(out.verdict.reason, ValidationReason::BridgeInQuestion);
        assert_eq!(scorer.calls(), 0);
    }

    #[test]
    fn tally_merges_by_sum() {
        let mut a = VerdictTally::default();
        a.record(ValidationReason::Accepted);
        let mut b = VerdictTally::default();
        b.record(ValidationReason::Accepted);
        b.record(ValidationReason::BridgeInQuestion);
        a.merge(&b);
        assert_eq!(a.total(), 3);
        assert_eq!(a.0[&ValidationReason::Accepted], 2);
    }
}
