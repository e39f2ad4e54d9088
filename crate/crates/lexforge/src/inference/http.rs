use std::time::Duration;

use serde::Deserialize;

use super::{redact, ChatBackend, ChatRequest, Completion, InferenceError};

const MAX_ERROR_BODY: usize = 512;

/// `POST <base_url>/v1/chat/completions` over ureq.
pub struct HttpBackend {
    agent: ureq::Agent,
    url: String,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(base_url: impl AsRef<str>, api_key: Option<String>, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        Self {
            agent: config.into(),
            url: format!("{}/v1/chat/completions", base_url.as_ref().trim_end_matches('/')),
            api_key,
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("url", &self.url)
            .field("api_key", &self.api_key.as_ref().map(|_| "***"))
            .finish()
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    logprobs: Option<WireLogprobs>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireLogprobs {
    #[serde(default)]
    content: Option<Vec<WireToken>>,
}

#[derive(Deserialize)]
struct WireToken {
    logprob: f64,
}

/// First choice's content and, when present, the summed token log-probability.
pub(crate) fn decode_response(body: &str) -> Result<Completion, InferenceError> {
    let wire: WireResponse = serde_json::from_str(body).map_err(|e| InferenceError::Decode(e.to_string()))?;
    let choice = wire.choices.into_iter().next().ok_or_else(|| InferenceError::Decode("response has no choices".into()))?;
    let logprob = choice.logprobs.and_then(|l| l.content).map(|tokens| tokens.iter().map(|t| t.logprob).sum());
    Ok(Completion { content: choice.message.content.unwrap_or_default(), logprob })
}

fn truncate(mut s: String) -> String {
    if s.len() > MAX_ERROR_BODY {
        let mut cut = MAX_ERROR_BODY;
        while !s.is_char_boundary(cut) {
            cut -= 1;
        }
        s.truncate(cut);
        s.push('…');
    }
    s
}

impl ChatBackend for HttpBackend {
    fn send(&self, req: &ChatRequest) -> Result<Completion, InferenceError> {
        let key = self.api_key.as_deref();
        log::debug!("POST {} model={} messages={} seed={:?}", self.url, req.model, req.messages.len(), req.seed);
        let mut call = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(k) = key {
            call = call.header("Authorization", &format!("Bearer {k}"));
        }
        let mut resp = match call.send_json(req) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(InferenceError::Timeout),
            Err(e) => return Err(InferenceError::Transport(redact(&e.to_string(), key))),
        };
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| InferenceError::Transport(redact(&e.to_string(), key)))?;
        log::trace!("{} -> {status}: {}", self.url, redact(&body, key));
        if !(200..300).contains(&status) {
            return Err(InferenceError::Endpoint { status, body: truncate(redact(&body, key)) });
        }
        decode_response(&body)
    }
}
