use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::templates::{context_block, numbered_passages, PromptTemplate};
use super::{ParseFailure, ParseFailureKind, SynthesisError};
use crate::gateway::{GenerationRequest, TextGenerator};
use crate::seed::RandomSeed;
use crate::types::{Document, SubQuestion};

pub const REFUSAL_SENTINEL: &str = "Sorry, I cannot generate";
const QUESTION_MARKER: &str = "Multihop Question:";
const ANSWER_MARKER: &str = "Answer:";
const BRIDGE_MARKER: &str = "Bridge Entity:";
const RECOVERED_MARKER: &str = "Recovered Questions:";

/// Decoding settings for the composition and decomposition calls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComposeConfig {
    pub composition_temperature: f64,
    pub decomposition_temperature: f64,
    pub max_new_tokens: u32,
}

impl Default for ComposeConfig {
    fn default() -> Self {
        ComposeConfig {
            composition_temperature: 0.7,
            decomposition_temperature: 0.0,
            max_new_tokens: 512,
        }
    }
}

/// Sub-seed for one composition attempt of a seed example.
pub fn attempt_seed(seed: RandomSeed, example_id: &str, hops: u32, attempt: u32) -> RandomSeed {
    seed.derive(&format!("compose/{example_id}/h{hops}/a{attempt}"))
}

/// Draws `t` distinct documents uniformly without replacement.
pub fn sample_documents(
    docs: &[Document],
    t: usize,
    seed: RandomSeed,
) -> Result<Vec<&Document>, SynthesisError> {
    if t < 2 {
        return Err(SynthesisError::InvalidHopCount(t));
    }
    if docs.len() < t {
        return Err(SynthesisError::InsufficientDocuments {
            available: docs.len(),
            needed: t,
        });
    }
    let mut rng = seed.rng();
    Ok(sample(&mut rng, docs.len(), t).into_iter().map(|i| &docs[i]).collect())
}

/// Asks the generator for a multi-hop question over `sampled`. Returns the raw
/// completion; a refusal is reported as [`SynthesisError::Refusal`].
pub fn compose_multihop(
    sampled: &[&Document],
    generator: &dyn TextGenerator,
    cfg: &ComposeConfig,
    seed: RandomSeed,
) -> Result<String, SynthesisError> {
    let prompt = PromptTemplate::composition().render(&[("given_doc", &numbered_passages(sampled))])?;
    let req = GenerationRequest::new(prompt)
        .max_new_tokens(cfg.max_new_tokens)
        .temperature(cfg.composition_temperature)
        .seed(seed.value());
    let raw = generator.generate(&req)?;
    if raw.contains(REFUSAL_SENTINEL) {
        return Err(SynthesisError::Refusal);
    }
    Ok(raw)
}

fn clean(s: &str) -> String {
    s.trim_matches(|c: char| c.is_whitespace() || c == '*')
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn fail(kind: ParseFailureKind, detail: impl Into<String>) -> ParseFailure {
    ParseFailure {
        kind,
        detail: detail.into(),
    }
}

/// First non-empty line of `s`, cleaned.
fn first_line(s: &str) -> String {
    s.lines().map(clean).find(|l| !l.is_empty()).unwrap_or_default()
}

/// `(question, answer)` from a composition completion.
pub fn parse_composition(raw: &str) -> Result<(String, String), ParseFailure> {
    let start = raw
        .rfind(QUESTION_MARKER)
        .ok_or_else(|| fail(ParseFailureKind::MissingQuestion, "no `Multihop Question:` marker"))?;
    let after = &raw[start + QUESTION_MARKER.len()..];
    let ans_at = after
        .find(ANSWER_MARKER)
        .ok_or_else(|| fail(ParseFailureKind::MissingAnswer, "no `Answer:` after the question"))?;
    let question = clean(&after[..ans_at]);
    if question.is_empty() {
        return Err(fail(ParseFailureKind::MissingQuestion, "empty question"));
    }
    let answer = first_line(&after[ans_at + ANSWER_MARKER.len()..]);
    if answer.is_empty() {
        return Err(fail(ParseFailureKind::MissingAnswer, "empty answer"));
    }
    Ok((question, answer))
}

/// Asks the generator to split `question` into single-hop questions, showing
/// it the sampled passages.
pub fn decompose_multihop(
    question: &str,
    answer: &str,
    sampled: &[&Document],
    generator: &dyn TextGenerator,
    cfg: &ComposeConfig,
) -> Result<String, SynthesisError> {
    let prompt = PromptTemplate::decomposition().render(&[
        ("question", question),
        ("answer", answer),
        ("context", &context_block(sampled)),
    ])?;
    let req = GenerationRequest::new(prompt)
        .max_new_tokens(cfg.max_new_tokens)
        .temperature(cfg.decomposition_temperature);
    Ok(generator.generate(&req)?)
}

/// Strips a leading `N.` or `N)` list number.
fn strip_number(line: &str) -> &str {
    let t = line.trim_start();
    let digits = t.len() - t.trim_start_matches(|c: char| c.is_ascii_digit()).len();
    if digits == 0 {
        return t;
    }
    t[digits..]
        .strip_prefix('.')
        .or_else(|| t[digits..].strip_prefix(')'))
        .map(str::trim_start)
        .unwrap_or(t)
}

/// `(bridge_entities, sub_questions)` from a decomposition completion for a
/// `hops`-hop question. The bridge line is split on commas only when more
/// than one bridge is expected.
pub fn parse_decomposition(
    raw: &str,
    hops: usize,
) -> Result<(Vec<String>, Vec<SubQuestion>), ParseFailure> {
    let start = raw
        .rfind(BRIDGE_MARKER)
        .ok_or_else(|| fail(ParseFailureKind::MissingBridge, "no `Bridge Entity:` marker"))?;
    let after = &raw[start + BRIDGE_MARKER.len()..];
    let bridge_line = after.lines().next().unwrap_or("");
    let bridges: Vec<String> = if hops > 2 {
        bridge_line.split(',').map(clean).filter(|b| !b.is_empty()).collect()
    } else {
        Some(clean(bridge_line)).filter(|b| !b.is_empty()).into_iter().collect()
    };
    if bridges.is_empty() {
        return Err(fail(ParseFailureKind::MissingBridge, "empty bridge entity"));
    }
    let rec = after
        .find(RECOVERED_MARKER)
        .ok_or_else(|| fail(ParseFailureKind::MissingSubQuestions, "no `Recovered Questions:` marker"))?;

    let mut subs: Vec<SubQuestion> = Vec::new();
    let mut pending: Option<String> = None;
    for line in after[rec + RECOVERED_MARKER.len()..].lines() {
        let body = strip_number(line);
        if let Some(q) = body.strip_prefix("Question:") {
            if let Some(prev) = pending.take() {
                return Err(fail(ParseFailureKind::MalformedSubQuestion, format!("no answer for {prev:?}")));
            }
            pending = Some(clean(q));
        } else if let Some(a) = body.strip_prefix(ANSWER_MARKER) {
            let Some(q) = pending.take() else {
                // a stray answer line ends the list
                break;
            };
            let a = clean(a);
            if q.is_empty() || a.is_empty() {
                return Err(fail(ParseFailureKind::MalformedSubQuestion, "empty question or answer"));
            }
            subs.push(SubQuestion::new(q, a));
        } else if !body.trim().is_empty() && pending.is_none() && !subs.is_empty() {
            // trailing commentary after the list
            break;
        }
    }
    if let Some(q) = pending {
        return Err(fail(ParseFailureKind::MalformedSubQuestion, format!("no answer for {q:?}")));
    }
    if subs.len() != hops {
        return Err(fail(
            ParseFailureKind::ArityMismatch,
            format!("expected {hops} sub-questions, parsed {}", subs.len()),
        ));
    }
    Ok((bridges, subs))
}
