//! Chat-completion client: request types, retry with exponential backoff and
//! order-preserving bounded-concurrency batches over a pluggable backend.

mod http;
mod mock;
mod server;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::HttpBackend;
pub use mock::{mock_generation, mock_judge_score, mock_reply, MockBackend};
pub use server::MockHttpServer;

pub const ENDPOINT_ENV: &str = "POLILEGAL_ENDPOINT";
pub const API_KEY_ENV: &str = "POLILEGAL_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(rename = "logprobs", default)]
    pub logprobs_requested: bool,
    /// Sampling seed, for endpoints that honour it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self { model: model.into(), messages, temperature: 0.0, max_tokens: 512, logprobs_requested: false, seed: None }
    }

    pub fn user(model: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self::new(model, vec![ChatMessage::user(prompt)])
    }

    pub fn validate(&self) -> Result<(), InferenceError> {
        let bad = |m: &str| Err(InferenceError::InvalidRequest(m.to_string()));
        match self.messages.last() {
            None => return bad("messages must not be empty"),
            Some(m) if m.role != Role::User => return bad("the last message must come from the user"),
            _ => {}
        }
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return bad("temperature must be a non-negative number");
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive");
        }
        Ok(())
    }

    pub fn last_user_content(&self) -> &str {
        self.messages.iter().rev().find(|m| m.role == Role::User).map_or("", |m| m.content.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub content: String,
    /// Summed token log-probability, when requested and returned.
    pub logprob: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferenceError {
    #[error("endpoint returned HTTP {status}: {body}")]
    Endpoint { status: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("could not decode endpoint response: {0}")]
    Decode(String),
    #[error("no endpoint configured: set {0}")]
    MissingEndpoint(&'static str),
}

impl InferenceError {
    /// Whether a retry might succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            InferenceError::Endpoint { status, .. } => *status == 429 || *status >= 500,
            InferenceError::Timeout | InferenceError::Transport(_) => true,
            _ => false,
        }
    }
}

/// One attempt at one request.
pub trait ChatBackend: Sync {
    fn send(&self, req: &ChatRequest) -> Result<Completion, InferenceError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn send(&self, req: &ChatRequest) -> Result<Completion, InferenceError> {
        (**self).send(req)
    }
}

impl<B: ChatBackend + ?Sized + Send> ChatBackend for Box<B> {
    fn send(&self, req: &ChatRequest) -> Result<Completion, InferenceError> {
        (**self).send(req)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub multiplier: f64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, initial_backoff_ms: 200, multiplier: 2.0, max_backoff_ms: 5_000 }
    }
}

impl RetryPolicy {
    /// Wait before retry number `retry` (1-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        let ms = self.initial_backoff_ms as f64 * self.multiplier.powi(retry.saturating_sub(1) as i32);
        Duration::from_millis(ms.min(self.max_backoff_ms as f64) as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    /// Falls back to `POLILEGAL_ENDPOINT` when unset.
    pub base_url: Option<String>,
    pub model: String,
    pub max_in_flight: usize,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
    /// Use the built-in deterministic mock instead of HTTP.
    pub mock: bool,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: None,
            model: "judge".to_string(),
            max_in_flight: 8,
            timeout_secs: 120,
            retry: RetryPolicy::default(),
            mock: false,
        }
    }
}

impl EndpointConfig {
    pub fn mock() -> Self {
        Self { mock: true, ..Self::default() }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if self.max_in_flight == 0 {
            issues.push("max_in_flight must be at least 1".to_string());
        }
        if self.retry.max_attempts == 0 {
            issues.push("retry.max_attempts must be at least 1".to_string());
        }
        if !(self.retry.multiplier >= 1.0) {
            issues.push("retry.multiplier must be at least 1".to_string());
        }
        if self.model.is_empty() {
            issues.push("model must not be empty".to_string());
        }
        issues
    }

    /// The mock backend, or an HTTP backend whose URL and key come from the
    /// config and the environment.
    pub fn backend(&self) -> Result<Box<dyn ChatBackend + Send>, InferenceError> {
        if self.mock {
            return Ok(Box::new(MockBackend::pipeline()));
        }
        let base_url = std::env::var(ENDPOINT_ENV)
            .ok()
            .filter(|s| !s.is_empty())
            .or_else(|| self.base_url.clone())
            .ok_or(InferenceError::MissingEndpoint(ENDPOINT_ENV))?;
        let api_key = std::env::var(API_KEY_ENV).ok().filter(|s| !s.is_empty());
        Ok(Box::new(HttpBackend::new(base_url, api_key, Duration::from_secs(self.timeout_secs))))
    }
}

/// Sends `req`, retrying transient failures with exponential backoff.
pub fn complete(backend: &dyn ChatBackend, req: &ChatRequest, retry: &RetryPolicy) -> Result<Completion, InferenceError> {
    req.validate()?;
    let attempts = retry.max_attempts.max(1);
    let mut attempt = 1;
    loop {
        match backend.send(req) {
            Ok(c) => return Ok(c),
            Err(e) if e.is_transient() && attempt < attempts => {
                let wait = retry.backoff(attempt);
                log::warn!("attempt {attempt}/{attempts} failed ({e}); retrying in {wait:?}");
                std::thread::sleep(wait);
                attempt += 1;
            }
            Err(e) => return Err(e),
        }
    }
}

/// Completes every request with at most `cfg.max_in_flight` in flight.
/// Results come back in input order; one failure does not affect the others.
pub fn batch_complete(backend: &dyn ChatBackend, reqs: &[ChatRequest], cfg: &EndpointConfig) -> Vec<Result<Completion, InferenceError>> {
    if reqs.is_empty() {
        return Vec::new();
    }
    let workers = cfg.max_in_flight.max(1).min(reqs.len());
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<Completion, InferenceError>>>> = Mutex::new(vec![None; reqs.len()]);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(req) = reqs.get(i) else { break };
                let result = complete(backend, req, &cfg.retry);
                slots.lock().expect("result slots poisoned")[i] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slots poisoned")
        .into_iter()
        .map(|r| r.expect("every request is completed"))
        .collect()
}

/// Replaces every occurrence of `secret` with `***`.
pub fn redact(text: &str, secret: Option<&str>) -> String {
    match secret {
        Some(s) if !s.is_empty() => text.replace(s, "***"),
        _ => text.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fast_retry(max_attempts: u32) -> RetryPolicy {
        RetryPolicy { max_attempts, initial_backoff_ms: 1, multiplier: 2.0, max_backoff_ms: 4 }
    }

    #[test]
    fn request_validation() {
        assert!(ChatRequest::user("m", "hi").validate().is_ok());
        let mut r = ChatRequest::user("m", "hi");
        r.messages.push(ChatMessage { role: Role::Assistant, content: "x".into() });
        assert!(r.validate().is_err());
        assert!(ChatRequest::new("m", vec![]).validate().is_err());
    }

    #[test]
    fn wire_field_names() {
        let r = ChatRequest::user("m", "hi");
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["logprobs"], false);
        assert!(v.get("seed").is_none());
        assert_eq!(v["messages"][0]["role"], "user");
    }

    #[test]
    fn backoff_grows_and_caps() {
        let p = RetryPolicy { max_attempts: 5, initial_backoff_ms: 100, multiplier: 2.0, max_backoff_ms: 300 };
        assert_eq!(p.backoff(1), Duration::from_millis(100));
        assert_eq!(p.backoff(2), Duration::from_millis(200));
        assert_eq!(p.backoff(3), Duration::from_millis(300));
    }

    #[test]
    fn retries_transient_errors() {
        let mock = MockBackend::scripted(vec![500, 500], "4");
        let c = complete(&mock, &ChatRequest::user("m", "q"), &fast_retry(3)).unwrap();
        assert_eq!(c.content, "4");
        assert_eq!(mock.calls(), 3);

        let mock = MockBackend::scripted(vec![500; 10], "4");
        assert_eq!(
            complete(&mock, &ChatRequest::user("m", "q"), &fast_retry(1)),
            Err(InferenceError::Endpoint { status: 500, body: "scripted failure".into() })
        );
        assert_eq!(mock.calls(), 1);

        let mock = MockBackend::scripted(vec![400], "4");
        assert!(complete(&mock, &ChatRequest::user("m", "q"), &fast_retry(3)).is_err());
        assert_eq!(mock.calls(), 1);
    }

    #[test]
    fn redaction() {
        assert_eq!(redact("Bearer sk-123 failed", Some("sk-123")), "Bearer *** failed");
        assert_eq!(redact("x", None), "x");
    }
}
