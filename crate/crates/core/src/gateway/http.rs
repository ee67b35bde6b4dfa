use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};

use super::{ChatBackend, ChatBackendConfig, ChatRequest, GatewayError, Role};
use crate::model::ScreenshotRef;

/// Attempts = 1 + `retries`; the delay before retry `n` (1-based) is
/// `backoff * 2^(n-1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub backoff: Duration,
}

impl RetryPolicy {
    pub fn delay(&self, retry: u32) -> Duration {
        self.backoff.saturating_mul(1u32 << retry.saturating_sub(1).min(16))
    }
}

#[derive(Debug)]
enum Attempt {
    Done(Value),
    Retry(GatewayError),
    Fatal(GatewayError),
}

/// JSON-over-HTTP POST with bearer auth and exponential backoff on 429, 5xx,
/// timeouts and connection failures.
#[derive(Debug, Clone)]
pub(crate) struct JsonPoster {
    client: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    verbose: bool,
}

impl JsonPoster {
    pub(crate) fn new(
        url: String,
        api_key: Option<String>,
        timeout: Duration,
        retry: RetryPolicy,
        verbose: bool,
    ) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Config(format!("http client: {e}")))?;
        Ok(JsonPoster { client, url, api_key, retry, verbose })
    }

    pub(crate) fn post(&self, body: &Value) -> Result<Value, GatewayError> {
        if self.verbose {
            let key = if self.api_key.is_some() { "Bearer [REDACTED]" } else { "none" };
            log::info!("POST {} (authorization: {key}) body={}", self.url, redact_images(body));
        }
        let attempts = self.retry.retries + 1;
        let mut last = None;
        for attempt in 1..=attempts {
            if attempt > 1 {
                std::thread::sleep(self.retry.delay(attempt - 1));
            }
            match self.once(body, attempt) {
                Attempt::Done(v) => {
                    if self.verbose {
                        log::info!("response from {}: {v}", self.url);
                    }
                    return Ok(v);
                }
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(e) => {
                    log::warn!("attempt {attempt}/{attempts} to {} failed: {e}", self.url);
                    last = Some(e);
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }

    fn once(&self, body: &Value, attempt: u32) -> Attempt {
        let mut req = self.client.post(&self.url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() => {
                return Attempt::Retry(GatewayError::Timeout { attempts: attempt, message: e.to_string() })
            }
            Err(e) => return Attempt::Retry(GatewayError::Transport { attempts: attempt, message: e.to_string() }),
        };
        let status = resp.status();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(GatewayError::Transport { attempts: attempt, message: e.to_string() }),
        };
        if status.is_success() {
            return match serde_json::from_str(&text) {
                Ok(v) => Attempt::Done(v),
                Err(e) => Attempt::Fatal(GatewayError::Decode(format!("{e}: {text}"))),
            };
        }
        let err = GatewayError::Protocol { status: status.as_u16(), body: text };
        if status.as_u16() == 429 || status.is_server_error() {
            Attempt::Retry(err)
        } else {
            Attempt::Fatal(err)
        }
    }
}

fn redact_images(body: &Value) -> Value {
    match body {
        Value::String(s) if s.starts_with("data:") => Value::String(format!("<{} bytes inline>", s.len())),
        Value::Array(items) => Value::Array(items.iter().map(redact_images).collect()),
        Value::Object(map) => Value::Object(map.iter().map(|(k, v)| (k.clone(), redact_images(v))).collect()),
        other => other.clone(),
    }
}

pub(crate) fn endpoint_url(base: &str, suffix: &str) -> String {
    let base = base.trim_end_matches('/');
    if base.ends_with(suffix) {
        base.to_string()
    } else {
        format!("{base}{suffix}")
    }
}

/// OpenAI-compatible `/chat/completions` client. Images are inlined as
/// base64 data URLs.
#[derive(Debug, Clone)]
pub struct HttpChat {
    poster: JsonPoster,
    model: String,
}

impl HttpChat {
    pub fn from_config(cfg: &ChatBackendConfig) -> Result<Self, GatewayError> {
        let endpoint = cfg
            .endpoint
            .as_deref()
            .ok_or_else(|| GatewayError::Config("http chat backend needs an endpoint".into()))?;
        let model = cfg.model.clone().ok_or_else(|| GatewayError::Config("http chat backend needs a model".into()))?;
        let retry = RetryPolicy { retries: cfg.retries, backoff: Duration::from_millis(cfg.backoff_ms) };
        let poster = JsonPoster::new(
            endpoint_url(endpoint, "/chat/completions"),
            cfg.api_key.clone(),
            Duration::from_secs(cfg.timeout_secs),
            retry,
            cfg.verbose,
        )?;
        Ok(HttpChat { poster, model })
    }

    pub fn request_body(&self, req: &ChatRequest) -> Result<Value, GatewayError> {
        let mut messages = Vec::with_capacity(req.messages.len());
        for m in &req.messages {
            let role = match m.role {
                Role::System => "system",
                Role::User => "user",
            };
            let content = if m.images.is_empty() {
                json!(m.text)
            } else {
                let mut parts = vec![json!({"type": "text", "text": m.text})];
                for img in &m.images {
                    parts.push(json!({"type": "image_url", "image_url": {"url": data_url(img)?}}));
                }
                Value::Array(parts)
            };
            messages.push(json!({"role": role, "content": content}));
        }
        Ok(json!({
            "model": self.model,
            "messages": messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }))
    }
}

fn data_url(img: &ScreenshotRef) -> Result<String, GatewayError> {
    let bytes = std::fs::read(&img.path).map_err(|source| GatewayError::Io { path: img.path.clone(), source })?;
    let lower = img.path.to_ascii_lowercase();
    let mime = if lower.ends_with(".jpg") || lower.ends_with(".jpeg") {
        "image/jpeg"
    } else if lower.ends_with(".webp") {
        "image/webp"
    } else {
        "image/png"
    };
    Ok(format!("data:{mime};base64,{}", base64::engine::general_purpose::STANDARD.encode(bytes)))
}

impl ChatBackend for HttpChat {
    fn name(&self) -> &str {
        "http"
    }

    fn chat(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        let body = self.request_body(req)?;
        let resp = self.poster.post(&body)?;
        resp.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| GatewayError::Decode(format!("no choices[0].message.content in {resp}")))
    }
}


#[cfg(test)]
mod tests {
    use super::stub::serve;
    use super::*;
    use std::sync::atomic::Ordering;

    fn completion(text: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
    }

    fn backend(url: &str, retries: u32) -> HttpChat {
        HttpChat::from_config(&ChatBackendConfig {
            endpoint: Some(url.to_string()),
            model: Some("test-model".into()),
            api_key: Some("sk-secret".into()),
            retries,
            backoff_ms: 1,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn retries_after_429_then_succeeds() {
        let stub = serve(vec![(429, "{\"error\":\"slow down\"}".into()), (200, completion("1. Open app"))]);
        let out = backend(&stub.url, 3).chat(&ChatRequest::user("hi", vec![])).unwrap();
        assert_eq!(out, "1. Open app");
        assert_eq!(stub.hits.load(Ordering::SeqCst), 2);
        let sent: Value = serde_json::from_str(&stub.bodies.lock().unwrap()[0]).unwrap();
        assert_eq!(sent["model"], "test-model");
        assert_eq!(sent["messages"][0]["content"], "hi");
    }

    #[test]
    fn persistent_failure_makes_one_plus_retries_attempts() {
        let stub = serve(vec![(503, "down".into())]);
        let err = backend(&stub.url, 2).chat(&ChatRequest::user("hi", vec![])).unwrap_err();
        assert!(matches!(err, GatewayError::Protocol { status: 503, .. }), "{err:?}");
        assert_eq!(stub.hits.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let stub = serve(vec![(400, "bad request".into())]);
        let err = backend(&stub.url, 3).chat(&ChatRequest::user("hi", vec![])).unwrap_err();
        match err {
            GatewayError::Protocol { status, body } => assert_eq!((status, body.as_str()), (400, "bad request")),
            e => panic!("{e:?}"),
        }
        assert_eq!(stub.hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn images_are_inlined_as_data_urls() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.png");
        std::fs::write(&path, [1u8, 2, 3]).unwrap();
        let img = ScreenshotRef { path: path.display().to_string(), width: 10, height: 10, step_index: 0 };
        let chat = backend("http://127.0.0.1:9", 0);
        let body = chat.request_body(&ChatRequest::user("look", vec![img])).unwrap();
        assert_eq!(body["messages"][0]["content"][1]["image_url"]["url"], "data:image/png;base64,AQID");
        assert_eq!(redact_images(&body)["messages"][0]["content"][1]["image_url"]["url"], "<26 bytes inline>");
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy { retries: 3, backoff: Duration::from_millis(100) };
        assert_eq!([p.delay(1), p.delay(2), p.delay(3)], [100, 200, 400].map(Duration::from_millis));
    }

    #[test]
    fn endpoint_suffix_is_appended_once() {
        assert_eq!(endpoint_url("http://h/v1/", "/chat/completions"), "http://h/v1/chat/completions");
        assert_eq!(endpoint_url("http://h/v1/chat/completions", "/chat/completions"), "http://h/v1/chat/completions");
    }
}
