//! Access to external models: text generation and forced-continuation
//! log-likelihood scoring.
//!
//! Two backends implement the traits here: [`mock`] (deterministic, offline,
//! used by every test) and [`http`] (an OpenAI-style `/completions` endpoint).
//! [`connect_generator`] / [`connect_scorer`] pick one from an
//! [`EndpointConfig`]: a `base_url` starting with `mock://` selects the mock.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod http;
pub mod mock;

pub use http::HttpBackend;
pub use mock::{MockGenerator, MockScorer, Responder};

/// Cue placed between the question and the scored target.
pub const ANSWER_CUE: &str = "\nAnswer:";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend returned an empty completion")]
    EmptyOutput,
    #[error("backend capability missing: {0}")]
    Capability(String),
    #[error("scoring error: {0}")]
    Scoring(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("endpoint configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_new_tokens: u32,
    pub temperature: f64,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        GenerationRequest {
            prompt: prompt.into(),
            max_new_tokens: 256,
            temperature: 0.0,
            stop_sequences: Vec::new(),
            seed: None,
        }
    }

    pub fn max_new_tokens(mut self, n: u32) -> Self {
        self.max_new_tokens = n;
        self
    }

    pub fn temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }

    pub fn stop(mut self, stops: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.stop_sequences = stops.into_iter().map(Into::into).collect();
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_new_tokens < 1 {
            return Err(GatewayError::InvalidRequest("max_new_tokens must be >= 1".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest("temperature must be >= 0".into()));
        }
        Ok(())
    }
}

/// Score `log p(target | context, question)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LikelihoodQuery {
    pub context: String,
    pub question: String,
    pub target: String,
}

impl LikelihoodQuery {
    pub fn new(
        context: impl Into<String>,
        question: impl Into<String>,
        target: impl Into<String>,
    ) -> Self {
        LikelihoodQuery {
            context: context.into(),
            question: question.into(),
            target: target.into(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.question.trim().is_empty() || self.target.trim().is_empty() {
            return Err(GatewayError::InvalidRequest(
                "question and target must be non-empty".into(),
            ));
        }
        Ok(())
    }

    /// `(prefix, full)` where `full = prefix + " " + target`. The prefix is the
    /// context line (when present), the question and the answer cue, the same
    /// layout the reader prompt uses.
    pub fn scoring_text(&self) -> (String, String) {
        let mut prefix = String::new();
        if !self.context.is_empty() {
            prefix.push_str(&self.context);
            prefix.push('\n');
        }
        prefix.push_str(&self.question);
        prefix.push_str(ANSWER_CUE);
        let full = format!("{prefix} {}", self.target);
        (prefix, full)
    }
}

/// How token log-probabilities of the target are reduced to one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreReduction {
    #[default]
    Sum,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the bearer token.
    pub token_env: Option<String>,
    pub max_in_flight: usize,
    pub timeout_secs: f64,
    pub retries: u32,
    pub backoff_ms: u64,
    pub reduction: ScoreReduction,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "mock://".into(),
            model_name: "mock".into(),
            token_env: None,
            max_in_flight: 8,
            timeout_secs: 60.0,
            retries: 2,
            backoff_ms: 250,
            reduction: ScoreReduction::Sum,
        }
    }
}

impl EndpointConfig {
    pub fn mock() -> Self {
        EndpointConfig::default()
    }

    pub fn http(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        EndpointConfig {
            base_url: base_url.into(),
            model_name: model_name.into(),
            ..Default::default()
        }
    }

    pub fn is_mock(&self) -> bool {
        self.base_url.starts_with("mock://")
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs.max(0.001))
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_in_flight < 1 {
            return Err(GatewayError::Config("max_in_flight must be >= 1".into()));
        }
        if self.base_url.is_empty() {
            return Err(GatewayError::Config("base_url is empty".into()));
        }
        Ok(())
    }

    pub fn token(&self) -> Option<String> {
        self.token_env
            .as_deref()
            .and_then(|var| std::env::var(var).ok())
            .filter(|t| !t.is_empty())
    }
}

pub trait TextGenerator: Send + Sync {
    /// Completion text with stop sequences stripped. An empty completion is
    /// reported as [`GatewayError::EmptyOutput`].
    fn generate(&self, req: &GenerationRequest) -> Result<String, GatewayError>;

    /// Identifies the backend flavour, used in cache keys.
    fn backend_name(&self) -> &str;

    fn model_name(&self) -> &str;
}

pub trait LogLikelihoodScorer: Send + Sync {
    /// Log-probability of `q.target`; higher is more likely.
    fn score(&self, q: &LikelihoodQuery) -> Result<f64, GatewayError>;
}

impl<T: TextGenerator + ?Sized> TextGenerator for Arc<T> {
    fn generate(&self, req: &GenerationRequest) -> Result<String, GatewayError> {
        (**self).generate(req)
    }
    fn backend_name(&self) -> &str {
        (**self).backend_name()
    }
    fn model_name(&self) -> &str {
        (**self).model_name()
    }
}

impl<T: LogLikelihoodScorer + ?Sized> LogLikelihoodScorer for Arc<T> {
    fn score(&self, q: &LikelihoodQuery) -> Result<f64, GatewayError> {
        (**self).score(q)
    }
}

/// Truncates `text` at the earliest occurrence of any stop sequence.
pub fn strip_stops(text: &str, stops: &[String]) -> String {
    let cut = stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min()
        .unwrap_or(text.len());
    text[..cut].to_string()
}

pub(crate) fn finish_completion(text: &str, req: &GenerationRequest) -> Result<String, GatewayError> {
    let out = strip_stops(text, &req.stop_sequences);
    if out.trim().is_empty() {
        Err(GatewayError::EmptyOutput)
    } else {
        Ok(out)
    }
}

/// `mock://world` selects the scripted synthetic-world generator; any other
/// `mock://` URL the plain mock.
pub fn connect_generator(cfg: &EndpointConfig) -> Result<Arc<dyn TextGenerator>, GatewayError> {
    cfg.validate()?;
    if cfg.base_url == "mock://world" {
        Ok(Arc::new(crate::fixtures::world_generator()))
    } else if cfg.is_mock() {
        Ok(Arc::new(MockGenerator::new().with_model(cfg.model_name.clone())))
    } else {
        Ok(Arc::new(HttpBackend::new(cfg.clone())?))
    }
}

pub fn connect_scorer(cfg: &EndpointConfig) -> Result<Arc<dyn LogLikelihoodScorer>, GatewayError> {
    cfg.validate()?;
    if cfg.is_mock() {
        Ok(Arc::new(MockScorer::new().with_reduction(cfg.reduction)))
    } else {
        Ok(Arc::new(HttpBackend::new(cfg.clone())?))
    }
}

/// Scores every query, running up to `max_in_flight` at a time. Results are
/// bound to input position; one failing element does not abort the batch.
pub fn score_batch(
    scorer: &dyn LogLikelihoodScorer,
    queries: &[LikelihoodQuery],
    max_in_flight: usize,
) -> Vec<Result<f64, GatewayError>> {
    let workers = max_in_flight.max(1).min(queries.len());
    if workers <= 1 {
        return queries.iter().map(|q| scorer.score(q)).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<f64, GatewayError>>>> =
        Mutex::new(vec![None; queries.len()]);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= queries.len() {
                    break;
                }
                let result = scorer.score(&queries[i]);
                slots.lock().expect("score slots poisoned")[i] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .expect("score slots poisoned")
        .into_iter()
        .map(|slot| slot.expect("every slot is filled"))
        .collect()
}

/// Shared call counter, cloned into the wrappers below.
#[derive(Debug, Clone, Default)]
pub struct CallCounter(Arc<AtomicUsize>);

impl CallCounter {
    pub fn get(&self) -> usize {
        self.0.load(Ordering::SeqCst)
    }
    fn bump(&self) {
        self.0.fetch_add(1, Ordering::SeqCst);
    }
}

/// Wraps a generator and counts calls. Clones share the counter.
#[derive(Clone)]
pub struct CountingGenerator {
    inner: Arc<dyn TextGenerator>,
    pub calls: CallCounter,
}

impl CountingGenerator {
    pub fn new(inner: Arc<dyn TextGenerator>) -> Self {
        CountingGenerator {
            inner,
            calls: CallCounter::default(),
        }
    }
}

impl TextGenerator for CountingGenerator {
    fn generate(&self, req: &GenerationRequest) -> Result<String, GatewayError> {
        self.calls.bump();
        self.inner.generate(req)
    }
    fn backend_name(&self) -> &str {
        self.inner.backend_name()
    }
    fn model_name(&self) -> &str {
        self.inner.model_name()
    }
}

/// Wraps a scorer and counts calls. Clones share the counter.
#[derive(Clone)]
pub struct CountingScorer {
    inner: Arc<dyn LogLikelihoodScorer>,
    pub calls: CallCounter,
}

impl CountingScorer {
    pub fn new(inner: Arc<dyn LogLikelihoodScorer>) -> Self {
        CountingScorer {
            inner,
            calls: CallCounter::default(),
        }
    }
}

impl LogLikelihoodScorer for CountingScorer {
    fn score(&self, q: &LikelihoodQuery) -> Result<f64, GatewayError> {
        self.calls.bump();
        self.inner.score(q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stop_sequences_cut_at_first_blank_line() {
        let stops = vec!["\n\n".to_string()];
        assert_eq!(strip_stops("para one\nline\n\npara two", &stops), "para one\nline");
        assert_eq!(strip_stops("no stop", &stops), "no stop");
        let both = vec!["B".to_string(), "A".to_string()];
        assert_eq!(strip_stops("xxAyyB", &both), "xx");
    }

    #[test]
    fn scoring_text_layout() {
        let q = LikelihoodQuery::new("ctx", "what city?", "Delhi");
        let (prefix, full) = q.scoring_text();
        assert_eq!(prefix, "ctx\nwhat city?\nAnswer:");
        assert_eq!(full, "ctx\nwhat city?\nAnswer: Delhi");
        let (prefix, _) = LikelihoodQuery::new("", "q?", "a").scoring_text();
        assert_eq!(prefix, "q?\nAnswer:");
    }

    #[test]
    fn request_validation() {
        assert!(GenerationRequest::new("p").max_new_tokens(0).validate().is_err());
        assert!(GenerationRequest::new("p").temperature(-1.0).validate().is_err());
        assert!(GenerationRequest::new("p").validate().is_ok());
        let mut cfg = EndpointConfig::mock();
        cfg.max_in_flight = 0;
        assert!(cfg.validate().is_err());
    }
}
