//! OpenAI-style completions backend (`openai-completions` flavour).
//!
//! Works with servers exposing `POST {base_url}/completions` (vLLM,
//! llama.cpp server, TGI in OpenAI mode, ...).
//!
//! Generation request: `{"model", "prompt", "max_tokens", "temperature",
//! "stop", "seed"?}`; the completion is `choices[0].text`.
//!
//! Scoring request: the full text `prefix + " " + target` (see
//! [`LikelihoodQuery::scoring_text`]) sent with `"echo": true`,
//! `"logprobs": 1`, `"max_tokens": 1`, `"temperature": 0`. From
//! `choices[0].logprobs` the arrays `tokens`, `token_logprobs` and
//! `text_offset` (character offsets into the echoed prompt) are read. Tokens
//! starting at or after the end of the prefix and before the end of the full
//! text belong to the target; a token that straddles the boundary is a
//! tokenization mismatch. Generated tokens past the prompt are ignored.

use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::{
    finish_completion, EndpointConfig, GatewayError, GenerationRequest, LikelihoodQuery,
    LogLikelihoodScorer, ScoreReduction, TextGenerator,
};

pub struct HttpBackend {
    cfg: EndpointConfig,
    client: Client,
    url: String,
}

impl HttpBackend {
    pub fn new(cfg: EndpointConfig) -> Result<Self, GatewayError> {
        cfg.validate()?;
        let client = Client::builder()
            .timeout(cfg.timeout())
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        let url = format!("{}/completions", cfg.base_url.trim_end_matches('/'));
        Ok(HttpBackend { cfg, client, url })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    fn post(&self, body: &Value) -> Result<Value, GatewayError> {
        let mut last = GatewayError::Transport("no attempt made".into());
        for attempt in 0..=self.cfg.retries {
            if attempt > 0 {
                let wait = self.cfg.backoff_ms.saturating_mul(1 << (attempt - 1).min(10));
                std::thread::sleep(Duration::from_millis(wait));
            }
            let mut req = self.client.post(&self.url).json(body);
            if let Some(token) = self.cfg.token() {
                req = req.bearer_auth(token);
            }
            match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        return resp
                            .json::<Value>()
                            .map_err(|e| GatewayError::Transport(format!("bad response body: {e}")));
                    }
                    let text = resp.text().unwrap_or_default();
                    last = GatewayError::Transport(format!("HTTP {status}: {text}"));
                    if !retryable(status) {
                        return Err(last);
                    }
                }
                Err(e) => last = GatewayError::Transport(e.to_string()),
            }
            log::debug!("request to {} failed (attempt {}): {last}", self.url, attempt + 1);
        }
        Err(last)
    }
}

fn retryable(status: StatusCode) -> bool {
    status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS
}

impl TextGenerator for HttpBackend {
    fn generate(&self, req: &GenerationRequest) -> Result<String, GatewayError> {
        req.validate()?;
        let mut body = json!({
            "model": self.cfg.model_name,
            "prompt": req.prompt,
            "max_tokens": req.max_new_tokens,
            "temperature": req.temperature,
        });
        if !req.stop_sequences.is_empty() {
            body["stop"] = json!(req.stop_sequences);
        }
        if let Some(seed) = req.seed {
            body["seed"] = json!(seed);
        }
        let resp = self.post(&body)?;
        let text = resp["choices"][0]["text"]
            .as_str()
            .ok_or_else(|| GatewayError::Transport("response lacks choices[0].text".into()))?;
        finish_completion(text, req)
    }

    fn backend_name(&self) -> &str {
        "openai-completions"
    }

    fn model_name(&self) -> &str {
        &self.cfg.model_name
    }
}

impl LogLikelihoodScorer for HttpBackend {
    fn score(&self, q: &LikelihoodQuery) -> Result<f64, GatewayError> {
        q.validate()?;
        let (prefix, full) = q.scoring_text();
        let body = json!({
            "model": self.cfg.model_name,
            "prompt": full,
            "max_tokens": 1,
            "temperature": 0.0,
            "echo": true,
            "logprobs": 1,
        });
        let resp = self.post(&body)?;
        let logprobs = &resp["choices"][0]["logprobs"];
        if !logprobs.is_object() {
            return Err(GatewayError::Capability(
                "endpoint did not return prompt logprobs".into(),
            ));
        }
        let values = target_logprobs(
            logprobs,
            prefix.chars().count(),
            full.chars().count(),
        )?;
        let sum: f64 = values.iter().sum();
        Ok(match self.cfg.reduction {
            ScoreReduction::Sum => sum,
            ScoreReduction::Mean => sum / values.len() as f64,
        })
    }
}

/// Extracts the log-probabilities of tokens covering `[boundary, end)`.
pub fn target_logprobs(logprobs: &Value, boundary: usize, end: usize) -> Result<Vec<f64>, GatewayError> {
    let missing = |f: &str| GatewayError::Capability(format!("logprobs lack `{f}`"));
    let offsets = logprobs["text_offset"].as_array().ok_or_else(|| missing("text_offset"))?;
    let lps = logprobs["token_logprobs"].as_array().ok_or_else(|| missing("token_logprobs"))?;
    if offsets.len() != lps.len() {
        return Err(GatewayError::Scoring("text_offset and token_logprobs differ in length".into()));
    }
    let offsets: Vec<usize> = offsets
        .iter()
        .map(|o| o.as_u64().map(|v| v as usize))
        .collect::<Option<_>>()
        .ok_or_else(|| GatewayError::Scoring("non-integer text_offset".into()))?;
    let mut out = Vec::new();
    for (i, &start) in offsets.iter().enumerate() {
        let stop = offsets.get(i + 1).copied().unwrap_or(usize::MAX);
        if start < boundary {
            if stop > boundary {
                return Err(GatewayError::Scoring(format!(
                    "token {i} straddles the answer boundary at {boundary}"
                )));
            }
            continue;
        }
        if start >= end {
            break;
        }
        let lp = lps[i]
            .as_f64()
            .ok_or_else(|| GatewayError::Scoring(format!("null logprob for target token {i}")))?;
        out.push(lp);
    }
    if out.is_empty() {
        return Err(GatewayError::Scoring("no target tokens in echoed prompt".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selects_target_region() {
        // "Q?\nAnswer:" is 10 chars; target " Delhi" spans [10, 16); one generated token after.
        let lp = json!({
            "tokens": ["Q", "?", "\n", "Answer", ":", " Del", "hi", "\n"],
            "token_logprobs": [null, -1.0, -0.5, -0.1, -0.2, -2.0, -0.25, -3.0],
            "text_offset": [0, 1, 2, 3, 9, 10, 14, 16],
        });
        assert_eq!(target_logprobs(&lp, 10, 16).unwrap(), vec![-2.0, -0.25]);
    }

    #[test]
    fn straddling_token_is_mismatch() {
        let lp = json!({
            "tokens": ["Q?\nAnswer: D", "elhi"],
            "token_logprobs": [null, -1.0],
            "text_offset": [0, 12],
        });
        assert!(matches!(target_logprobs(&lp, 10, 16), Err(GatewayError::Scoring(_))));
    }

    #[test]
    fn missing_arrays_are_capability_errors() {
        assert!(matches!(
            target_logprobs(&json!({}), 1, 2),
            Err(GatewayError::Capability(_))
        ));
    }
}
