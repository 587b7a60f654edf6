//! OpenAI-compatible chat-completion transport. The trait keeps the judge
//! testable against scripted mocks; the production path is plain HTTP.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> ChatMessage {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }
}

/// The assistant message of the first choice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatCompletion {
    pub content: Option<String>,
    pub refusal: Option<String>,
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("endpoint returned HTTP status {0}")]
    Status(u16),
    #[error("network failure: {0}")]
    Network(String),
    #[error("malformed completion payload: {0}")]
    MalformedPayload(String),
}

pub trait ChatTransport: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatCompletion, TransportError>;
}

/// Blocking HTTP transport for `POST {endpoint}/chat/completions` with an
/// optional bearer token.
pub struct HttpTransport {
    agent: ureq::Agent,
    url: String,
    bearer: Option<String>,
}

impl HttpTransport {
    pub fn new(endpoint_url: &str, api_key: Option<String>, timeout: Duration) -> HttpTransport {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build();
        HttpTransport {
            agent: config.into(),
            url: format!("{}/chat/completions", endpoint_url.trim_end_matches('/')),
            bearer: api_key.map(|k| format!("Bearer {k}")),
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&self, request: &ChatRequest) -> Result<ChatCompletion, TransportError> {
        let mut builder = self
            .agent
            .post(&self.url)
            .header("content-type", "application/json");
        if let Some(bearer) = &self.bearer {
            builder = builder.header("authorization", bearer);
        }
        let mut response = builder.send_json(request).map_err(|err| match err {
            ureq::Error::StatusCode(code) => TransportError::Status(code),
            other => TransportError::Network(other.to_string()),
        })?;
        let payload: serde_json::Value = response
            .body_mut()
            .read_json()
            .map_err(|err| TransportError::MalformedPayload(err.to_string()))?;
        parse_completion_payload(&payload)
    }
}

pub(crate) fn parse_completion_payload(
    payload: &serde_json::Value,
) -> Result<ChatCompletion, TransportError> {
    let message = payload
        .get("choices")
        .and_then(|c| c.get(0))
        .and_then(|c| c.get("message"))
        .ok_or_else(|| {
            TransportError::MalformedPayload("no choices[0].message in payload".into())
        })?;
    Ok(ChatCompletion {
        content: message
            .get("content")
            .and_then(|v| v.as_str())
            .map(str::to_string),
        refusal: message
            .get("refusal")
            .and_then(|v| v.as_str())
            .map(str::to_string),
    })
}
