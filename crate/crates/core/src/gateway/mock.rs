//! Deterministic offline backends.
//!
//! [`MockScorer`] scores a target by how many of its whitespace tokens are
//! missing from the context and question:
//! `score = -(# target tokens absent from context ∪ question)`. Tokens are
//! compared case-insensitively with surrounding punctuation trimmed. The score
//! is monotone in evidence coverage, which is all the pipeline relies on.
//!
//! [`MockGenerator`] answers in this order: registered fixtures (first whose
//! key occurs in the prompt), a custom responder, the `echo: ` marker (returns
//! the text after the last marker), a propositionizer prompt (returns a JSON
//! array of the content's sentences). Anything else is an empty completion.

use std::collections::HashSet;
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use super::{
    finish_completion, GatewayError, GenerationRequest, LikelihoodQuery, LogLikelihoodScorer,
    ScoreReduction, TextGenerator,
};
use crate::propositions::{sentence_split, CONTENT_MARKER};

pub const ECHO_MARKER: &str = "echo: ";

pub type Responder = Arc<dyn Fn(&GenerationRequest) -> Option<String> + Send + Sync>;

#[derive(Clone)]
pub struct MockGenerator {
    model: String,
    fixtures: Vec<(String, String)>,
    responder: Option<Responder>,
    fail_all: bool,
    calls: Arc<AtomicUsize>,
}

impl Default for MockGenerator {
    fn default() -> Self {
        Self::new()
    }
}

impl MockGenerator {
    pub fn new() -> Self {
        MockGenerator {
            model: "mock".into(),
            fixtures: Vec::new(),
            responder: None,
            fail_all: false,
            calls: Arc::new(AtomicUsize::new(0)),
        }
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }

    /// Respond with `response` whenever `key` occurs in the prompt.
    pub fn with_fixture(mut self, key: impl Into<String>, response: impl Into<String>) -> Self {
        self.fixtures.push((key.into(), response.into()));
        self
    }

    pub fn with_responder(mut self, responder: Responder) -> Self {
        self.responder = Some(responder);
        self
    }

    /// Every call fails with a transport error.
    pub fn failing() -> Self {
        MockGenerator {
            fail_all: true,
            ..Self::new()
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn raw_completion(&self, req: &GenerationRequest) -> String {
        let prompt = &req.prompt;
        if let Some((_, resp)) = self.fixtures.iter().find(|(k, _)| prompt.contains(k.as_str())) {
            return resp.clone();
        }
        if let Some(out) = self.responder.as_ref().and_then(|r| r(req)) {
            return out;
        }
        if let Some(pos) = prompt.rfind(ECHO_MARKER) {
            return prompt[pos + ECHO_MARKER.len()..].to_string();
        }
        if let Some(pos) = prompt.rfind(CONTENT_MARKER) {
            let content = &prompt[pos + CONTENT_MARKER.len()..];
            let sentences = sentence_split(content);
            return serde_json::to_string(&sentences).expect("string list serialises");
        }
        String::new()
    }
}

impl TextGenerator for MockGenerator {
    fn generate(&self, req: &GenerationRequest) -> Result<String, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        req.validate()?;
        if self.fail_all {
            return Err(GatewayError::Transport("mock backend configured to fail".into()));
        }
        finish_completion(&self.raw_completion(req), req)
    }

    fn backend_name(&self) -> &str {
        "mock"
    }

    fn model_name(&self) -> &str {
        &self.model
    }
}

/// Lower-cased token with leading/trailing punctuation removed.
pub fn mock_token(raw: &str) -> String {
    raw.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

/// The missing-token rule, without any call bookkeeping.
pub fn mock_score(q: &LikelihoodQuery, reduction: ScoreReduction) -> f64 {
    let evidence: HashSet<String> = q
        .context
        .split_whitespace()
        .chain(q.question.split_whitespace())
        .map(mock_token)
        .collect();
    let target: Vec<String> = q.target.split_whitespace().map(mock_token).collect();
    let missing = target.iter().filter(|t| !evidence.contains(*t)).count() as f64;
    let score = match reduction {
        ScoreReduction::Sum => -missing,
        ScoreReduction::Mean => -missing / target.len().max(1) as f64,
    };
    // no negative zero
    score + 0.0
}

#[derive(Clone)]
pub struct MockScorer {
    reduction: ScoreReduction,
    failing_targets: Vec<String>,
    jitter_micros: u64,
    calls: Arc<AtomicUsize>,
}

impl Default for MockScorer {
    fn default() -> Self {
        Self::new()
    }
}

impl MockScorer {
    pub fn new() -> Self {
        MockScorer {
            reduction: ScoreReduction::Sum,
            failing_targets: Vec::new(),
            jitter_micros: 0,
            calls: Arc::new(AtomicUsize::new(0)),
        }
    }

    pub fn with_reduction(mut self, reduction: ScoreReduction) -> Self {
        self.reduction = reduction;
        self
    }

    /// Queries whose target equals one of these fail with a scoring error.
    pub fn with_failing_targets(mut self, targets: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.failing_targets = targets.into_iter().map(Into::into).collect();
        self
    }

    /// Sleep a query-dependent pseudo-random duration up to `max_micros`.
    pub fn with_jitter(mut self, max_micros: u64) -> Self {
        self.jitter_micros = max_micros;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl LogLikelihoodScorer for MockScorer {
    fn score(&self, q: &LikelihoodQuery) -> Result<f64, GatewayError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        q.validate()?;
        if self.jitter_micros > 0 {
            let mut h = std::collections::hash_map::DefaultHasher::new();
            q.hash(&mut h);
            std::thread::sleep(Duration::from_micros(h.finish() % self.jitter_micros));
        }
        if self.failing_targets.contains(&q.target) {
            return Err(GatewayError::Scoring(format!("mock failure for target {:?}", q.target)));
        }
        Ok(mock_score(q, self.reduction))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::score_batch;
    use proptest::prelude::*;

    #[test]
    fn echo_contract() {
        let g = MockGenerator::new();
        assert_eq!(g.generate(&GenerationRequest::new("echo: hello")).unwrap(), "hello");
        assert_eq!(g.generate(&GenerationRequest::new("nothing")), Err(GatewayError::EmptyOutput));
        let stopped = GenerationRequest::new("echo: a\n\nb").stop(["\n\n"]);
        assert_eq!(g.generate(&stopped).unwrap(), "a");
        assert_eq!(g.calls(), 3);
    }

    #[test]
    fn fixtures_take_precedence() {
        let g = MockGenerator::new().with_fixture("KEY", "fixed");
        assert_eq!(g.generate(&GenerationRequest::new("echo: x KEY")).unwrap(), "fixed");
        assert!(MockGenerator::failing().generate(&GenerationRequest::new("echo: x")).is_err());
    }

    #[test]
    fn missing_token_rule() {
        let s = MockScorer::new();
        let q = LikelihoodQuery::new("head office in Delhi", "what city?", "Delhi");
        assert_eq!(s.score(&q).unwrap(), 0.0);
        let q = LikelihoodQuery::new("", "what city?", "Delhi");
        assert_eq!(s.score(&q).unwrap(), -1.0);
        let q = LikelihoodQuery::new("a", "what?", "a b");
        assert_eq!(s.score(&q).unwrap(), -1.0);
        let mean = MockScorer::new().with_reduction(ScoreReduction::Mean);
        assert_eq!(mean.score(&q).unwrap(), -0.5);
        assert!(s.score(&LikelihoodQuery::new("", "", "x")).is_err());
    }

    #[test]
    fn batch_equals_sequential() {
        let s = MockScorer::new();
        let qs = vec![
            LikelihoodQuery::new("Delhi", "q?", "Delhi"),
            LikelihoodQuery::new("", "q?", "Delhi"),
            LikelihoodQuery::new("x", "q?", "a b c"),
        ];
        let batch: Vec<f64> = score_batch(&s, &qs, 4).into_iter().map(Result::unwrap).collect();
        let seq: Vec<f64> = qs.iter().map(|q| s.score(q).unwrap()).collect();
        assert_eq!(batch, seq);
    }

    #[test]
    fn batch_keeps_failures_in_place() {
        let s = MockScorer::new().with_failing_targets(["BAD"]);
        let qs = vec![
            LikelihoodQuery::new("", "q?", "ok"),
            LikelihoodQuery::new("", "q?", "BAD"),
            LikelihoodQuery::new("", "q?", "fine"),
        ];
        let out = score_batch(&s, &qs, 2);
        assert!(out[0].is_ok() && out[1].is_err() && out[2].is_ok());
    }

    #[test]
    fn jittered_batch_preserves_order() {
        let s = MockScorer::new().with_jitter(300);
        let qs: Vec<_> = (0..100)
            .map(|i| LikelihoodQuery::new(format!("t{}", i % 7), "q?", format!("t{i} t{}", i % 3)))
            .collect();
        let out = score_batch(&s, &qs, 8);
        for (q, r) in qs.iter().zip(out) {
            assert_eq!(r.unwrap(), mock_score(q, ScoreReduction::Sum));
        }
    }

    proptest! {
        #[test]
        fn mock_is_pure(ctx in "[a-d ]{0,20}", q in "[a-d]{1,5}", t in "[a-d]{1,3}( [a-d]{1,3}){0,2}") {
            let s = MockScorer::new();
            let query = LikelihoodQuery::new(ctx, q, t);
            prop_assert_eq!(s.score(&query).unwrap(), s.score(&query).unwrap());
            prop_assert!(s.score(&query).unwrap() <= 0.0);
        }
    }
}
