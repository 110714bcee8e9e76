//! Chat-completion clients.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Provenance;

pub const API_KEY_VAR: &str = "SALAD_API_KEY";
pub const API_BASE_VAR: &str = "SALAD_API_BASE";
pub const DEFAULT_API_BASE: &str = "https://api.openai.com/v1";

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request failed: {0}")]
    Request(String),
    #[error("unexpected response: {0}")]
    Response(String),
    #[error("missing environment variable {0}")]
    MissingEnv(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Wire format of a chat-completion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
}

impl ChatRequest {
    pub fn user(model: &str, prompt: &str, temperature: f64, top_p: f64) -> Self {
        ChatRequest {
            model: model.to_string(),
            messages: vec![ChatMessage {
                role: "user".into(),
                content: prompt.to_string(),
            }],
            temperature,
            top_p,
        }
    }

    pub fn prompt(&self) -> &str {
        self.messages.first().map(|m| m.content.as_str()).unwrap_or("")
    }
}

pub trait CompletionClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, ClientError>;

    fn provenance(&self) -> Provenance {
        Provenance::Llm
    }
}

impl<C: CompletionClient + ?Sized> CompletionClient for Box<C> {
    fn complete(&self, request: &ChatRequest) -> Result<String, ClientError> {
        (**self).complete(request)
    }

    fn provenance(&self) -> Provenance {
        (**self).provenance()
    }
}

/// Blocking HTTP client for OpenAI-compatible `/chat/completions` endpoints.
pub struct HttpClient {
    base: String,
    api_key: String,
    agent: ureq::Agent,
}

impl HttpClient {
    pub fn new(base: impl Into<String>, api_key: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpClient {
            base: base.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            agent,
        }
    }

    /// Reads `SALAD_API_KEY` (required) and `SALAD_API_BASE` (optional).
    pub fn from_env(timeout: Duration) -> Result<Self, ClientError> {
        let key = std::env::var(API_KEY_VAR).map_err(|_| ClientError::MissingEnv(API_KEY_VAR))?;
        let base = std::env::var(API_BASE_VAR).unwrap_or_else(|_| DEFAULT_API_BASE.to_string());
        Ok(Self::new(base, key, timeout))
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base)
    }
}

impl CompletionClient for HttpClient {
    fn complete(&self, request: &ChatRequest) -> Result<String, ClientError> {
        let payload = serde_json::to_string(request).map_err(|e| ClientError::Request(e.to_string()))?;
        let mut resp = self
            .agent
            .post(&self.endpoint())
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .header("Content-Type", "application/json")
            .send(payload.as_str())
            .map_err(|e| ClientError::Request(e.to_string()))?;
        let status = resp.status();
        let body: serde_json::Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| ClientError::Response(e.to_string()))?;
        if !status.is_success() {
            return Err(ClientError::Request(format!("HTTP {status}: {body}")));
        }
        body.pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| ClientError::Response(format!("no message content in {body}")))
    }
}

const FRAMING_PREFIXES: [&str; 8] = [
    "hypothesis:",
    "sentence:",
    "counterfactual:",
    "counterfactual sentence:",
    "negative sentence:",
    "positive sentence:",
    "revised sentence:",
    "answer:",
];

/// Strips chat framing: code fences, a leading label, surrounding quotes.
/// For NLI-style replies carrying a `Hypothesis:` line, that line wins.
pub fn clean_response(raw: &str) -> String {
    let mut text = raw.trim();
    if let Some(inner) = text.strip_prefix("```") {
        let inner = inner.split_once('\n').map(|(_, rest)| rest).unwrap_or(inner);
        text = inner.trim_end().strip_suffix("```").unwrap_or(inner).trim();
    }
    let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let hyp = lines
        .iter()
        .find(|l| l.to_ascii_lowercase().starts_with("hypothesis:"));
    let mut out = match hyp {
        Some(l) => l.to_string(),
        None => lines.join(" "),
    };
    let lower = out.to_ascii_lowercase();
    if let Some(p) = FRAMING_PREFIXES.iter().find(|p| lower.starts_with(*p)) {
        out = out[p.len()..].trim().to_string();
    }
    for (open, close) in [('"', '"'), ('“', '”'), ('\'', '\'')] {
        if out.len() >= 2 && out.starts_with(open) && out.ends_with(close) {
            out = out[open.len_utf8()..out.len() - close.len_utf8()].trim().to_string();
        }
    }
    out
}
