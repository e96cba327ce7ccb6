//! The completions backend against a minimal local HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde_json::{json, Value};

use hopsum_core::gateway::{
    EndpointConfig, GatewayError, GenerationRequest, HttpBackend, LikelihoodQuery,
    LogLikelihoodScorer, TextGenerator,
};

type Handler = dyn Fn(usize, &Value) -> (u16, String) + Send + Sync;

struct Server {
    url: String,
    requests: Arc<Mutex<Vec<(String, Value)>>>,
}

fn read_request(reader: &mut BufReader<TcpStream>) -> Option<(String, Value)> {
    let mut head = String::new();
    let mut length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).ok()? == 0 {
            return None;
        }
        if line == "\r\n" {
            break;
        }
        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            length = v.trim().parse().ok()?;
        }
        head.push_str(&line);
    }
    let mut body = vec![0u8; length];
    reader.read_exact(&mut body).ok()?;
    Some((head, serde_json::from_slice(&body).unwrap_or(Value::Null)))
}

fn serve(handler: Arc<Handler>) -> Server {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let requests = Arc::new(Mutex::new(Vec::new()));
    let log = requests.clone();
    let count = Arc::new(AtomicUsize::new(0));
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { break };
            let (handler, log, count) = (handler.clone(), log.clone(), count.clone());
            std::thread::spawn(move || {
                let mut writer = stream.try_clone().unwrap();
                let mut reader = BufReader::new(stream);
                while let Some((head, body)) = read_request(&mut reader) {
                    let n = count.fetch_add(1, Ordering::SeqCst);
                    log.lock().unwrap().push((head, body.clone()));
                    let (status, text) = handler(n, &body);
                    let reply = format!(
                        "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\n\r\n{text}",
                        text.len()
                    );
                    if writer.write_all(reply.as_bytes()).is_err() {
                        break;
                    }
                }
            });
        }
    });
    Server { url, requests }
}

fn config(url: &str) -> EndpointConfig {
    EndpointConfig {
        retries: 2,
        backoff_ms: 1,
        timeout_secs: 5.0,
        ..EndpointConfig::http(url, "tiny")
    }
}

#[test]
fn generation_sends_the_documented_body() {
    let server = serve(Arc::new(|_, _| (200, json!({"choices": [{"text": " Delhi\n\nQuestion: next"}]}).to_string())));
    std::env::set_var("HOPSUM_TEST_TOKEN", "sekrit");
    let cfg = EndpointConfig {
        token_env: Some("HOPSUM_TEST_TOKEN".into()),
        ..config(&server.url)
    };
    let backend = HttpBackend::new(cfg).unwrap();
    let req = GenerationRequest::new("Where?\nAnswer:").max_new_tokens(8).stop(["\n\n"]).seed(7);
    assert_eq!(backend.generate(&req).unwrap(), " Delhi");

    let seen = server.requests.lock().unwrap();
    let (head, body) = &seen[0];
    assert!(head.starts_with("POST /v1/completions "));
    assert!(head.to_ascii_lowercase().contains("authorization: bearer sekrit"));
    assert_eq!(body["model"], "tiny");
    assert_eq!(body["prompt"], "Where?\nAnswer:");
    assert_eq!(body["max_tokens"], 8);
    assert_eq!(body["stop"], json!(["\n\n"]));
    assert_eq!(body["seed"], 7);
}

#[test]
fn scoring_sums_the_target_tokens() {
    let server = serve(Arc::new(|_, body: &Value| {
        let prompt = body["prompt"].as_str().unwrap().to_string();
        // one token per space-separated word, offsets into the echoed prompt
        let mut tokens = Vec::new();
        let mut offsets = Vec::new();
        let mut at = 0;
        for (i, w) in prompt.split(' ').enumerate() {
            let tok = if i == 0 { w.to_string() } else { format!(" {w}") };
            offsets.push(at);
            at += tok.chars().count();
            tokens.push(tok);
        }
        let lps: Vec<Value> = (0..tokens.len()).map(|i| if i == 0 { Value::Null } else { json!(-0.5) }).collect();
        assert_eq!(body["echo"], true);
        (200, json!({"choices": [{"text": "", "logprobs": {"tokens": tokens, "token_logprobs": lps, "text_offset": offsets}}]}).to_string())
    }));
    let backend = HttpBackend::new(config(&server.url)).unwrap();
    let q = LikelihoodQuery::new("", "Where is it?", "New Delhi");
    let lp = backend.score(&q).unwrap();
    assert!((lp - -1.0).abs() < 1e-12, "two target tokens at -0.5 each, got {lp}");
}

#[test]
fn server_errors_are_retried_and_client_errors_are_not() {
    let server = serve(Arc::new(|n, _| {
        if n < 2 {
            (503, "{}".into())
        } else {
            (200, json!({"choices": [{"text": "ok"}]}).to_string())
        }
    }));
    let backend = HttpBackend::new(config(&server.url)).unwrap();
    assert_eq!(backend.generate(&GenerationRequest::new("x")).unwrap(), "ok");
    assert_eq!(server.requests.lock().unwrap().len(), 3);

    let bad = serve(Arc::new(|_, _| (400, "{\"error\":\"nope\"}".into())));
    let backend = HttpBackend::new(config(&bad.url)).unwrap();
    assert!(matches!(backend.generate(&GenerationRequest::new("x")), Err(GatewayError::Transport(_))));
    assert_eq!(bad.requests.lock().unwrap().len(), 1);
}

#[test]
fn missing_logprobs_is_a_capability_error() {
    let server = serve(Arc::new(|_, _| (200, json!({"choices": [{"text": "x"}]}).to_string())));
    let backend = HttpBackend::new(config(&server.url)).unwrap();
    let q = LikelihoodQuery::new("ctx", "q?", "a");
    assert!(matches!(backend.score(&q), Err(GatewayError::Capability(_))));
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let backend = HttpBackend::new(config(&format!("http://127.0.0.1:{port}/v1"))).unwrap();
    assert!(matches!(backend.generate(&GenerationRequest::new("x")), Err(GatewayError::Transport(_))));
}
