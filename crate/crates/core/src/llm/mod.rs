//! Chat-completion providers: an OpenAI-compatible HTTP client and
//! deterministic offline mocks.

mod audit;
mod mock;
mod remote;

pub use audit::{AuditLog, AuditRecord};
pub use mock::{overlap_score, CandidateEchoMock, FnMock, RecordingProvider, ScriptedMock};
pub use remote::{HttpChatConfig, HttpChatProvider};

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("provider exhausted after {attempts} attempts: {last}")]
    ProviderExhausted { attempts: u32, last: String },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("request rejected: {0}")]
    Rejected(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub model: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            model: "gpt-3.5-turbo".into(),
            temperature: 0.4,
            top_p: 0.4,
            max_tokens: 32,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        let bad = |m: String| Err(LlmError::InvalidRequest(m));
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature {} must be >= 0", self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return bad(format!("top_p {} must be in (0, 1]", self.top_p));
        }
        if self.max_tokens == 0 {
            return bad("max_tokens must be positive".into());
        }
        if self.model.trim().is_empty() {
            return bad("model must be set".into());
        }
        Ok(())
    }
}

/// One chat call. `candidates`, `level` and `document_id` are local context
/// for mocks and the audit log; they are never sent over the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_text: String,
    pub user_text: String,
    #[serde(default)]
    pub candidates: Vec<String>,
    #[serde(default)]
    pub level: Option<usize>,
    #[serde(default)]
    pub document_id: Option<String>,
}

impl ChatRequest {
    pub fn new(system_text: impl Into<String>, user_text: impl Into<String>) -> Self {
        Self {
            system_text: system_text.into(),
            user_text: user_text.into(),
            candidates: Vec::new(),
            level: None,
            document_id: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatExchange {
    pub system_text: String,
    pub user_text: String,
    /// Model output exactly as returned.
    pub response_text: String,
    #[serde(serialize_with = "duration_ms")]
    pub latency: Duration,
    pub provider_meta: Value,
}

fn duration_ms<S: serde::Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64() * 1e3)
}

pub trait ChatProvider: Send + Sync {
    fn name(&self) -> &str;

    /// Produce the model's text for a validated request.
    fn send(&self, request: &ChatRequest, config: &GenerationConfig) -> Result<ChatExchange, LlmError>;
}

/// Validate and dispatch one chat call.
pub fn complete(
    provider: &dyn ChatProvider,
    request: &ChatRequest,
    config: &GenerationConfig,
) -> Result<ChatExchange, LlmError> {
    if request.system_text.is_empty() || request.user_text.is_empty() {
        return Err(LlmError::InvalidRequest("system and user text must be non-empty".into()));
    }
    config.validate()?;
    provider.send(request, config)
}
