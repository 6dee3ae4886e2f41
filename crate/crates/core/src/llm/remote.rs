//! OpenAI-compatible `POST {base}/chat/completions`.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatExchange, ChatProvider, ChatRequest, GenerationConfig, LlmError};
use crate::http::{join_url, HttpError, JsonEndpoint, RetryPolicy, ThrottleConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpChatConfig {
    pub base_url: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub retry: RetryPolicy,
    pub throttle: ThrottleConfig,
}

impl Default for HttpChatConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            retry: RetryPolicy::default(),
            throttle: ThrottleConfig::default(),
        }
    }
}

pub struct HttpChatProvider {
    endpoint: JsonEndpoint,
}

impl HttpChatProvider {
    pub fn new(config: &HttpChatConfig) -> Result<Self, LlmError> {
        let key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        Self::with_key(config, key)
    }

    pub fn with_key(config: &HttpChatConfig, api_key: Option<String>) -> Result<Self, LlmError> {
        let endpoint = JsonEndpoint::new(
            join_url(&config.base_url, "chat/completions"),
            api_key,
            config.retry.clone(),
            config.throttle.clone(),
        )
        .map_err(map_http)?;
        Ok(Self { endpoint })
    }
}

fn map_http(e: HttpError) -> LlmError {
    match e {
        HttpError::Auth { status, body } => LlmError::Auth(format!("HTTP {status}: {body}")),
        HttpError::Exhausted { attempts, last } => LlmError::ProviderExhausted { attempts, last },
        HttpError::Malformed(m) => LlmError::MalformedResponse(m),
        HttpError::Rejected { status, body } => LlmError::Rejected(format!("HTTP {status}: {body}")),
        HttpError::Client(m) => LlmError::InvalidRequest(m),
    }
}

pub(crate) fn request_body(request: &ChatRequest, config: &GenerationConfig) -> Value {
    json!({
        "model": config.model,
        "messages": [
            { "role": "system", "content": request.system_text },
            { "role": "user", "content": request.user_text },
        ],
        "temperature": config.temperature,
        "top_p": config.top_p,
        "max_tokens": config.max_tokens,
    })
}

fn first_choice(body: &Value) -> Result<String, LlmError> {
    body.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| LlmError::MalformedResponse(format!("no choices[0].message.content in {body}")))
}

impl ChatProvider for HttpChatProvider {
    fn name(&self) -> &str {
        self.endpoint.url()
    }

    fn send(&self, request: &ChatRequest, config: &GenerationConfig) -> Result<ChatExchange, LlmError> {
        let outcome = self.endpoint.post(&request_body(request, config)).map_err(map_http)?;
        let response_text = first_choice(&outcome.body)?;
        let provider_meta = json!({
            "provider": "http",
            "retries": outcome.retries,
            "backoff_ms": outcome.backoff_delays.iter().map(|d| d.as_millis() as u64).collect::<Vec<_>>(),
            "model": outcome.body.get("model").cloned().unwrap_or(Value::Null),
            "usage": outcome.body.get("usage").cloned().unwrap_or(Value::Null),
        });
        Ok(ChatExchange {
            system_text: request.system_text.clone(),
            user_text: request.user_text.clone(),
            response_text,
            latency: outcome.latency,
            provider_meta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn body_shape() {
        let r = ChatRequest::new("sys", "user");
        let b = request_body(&r, &GenerationConfig::default());
        assert_eq!(b["messages"][0]["role"], "system");
        assert_eq!(b["messages"][1]["content"], "user");
        assert_eq!(b["temperature"], 0.4);
        assert_eq!(b["top_p"], 0.4);
        assert_eq!(b["max_tokens"], 32);
        assert!(b.get("candidates").is_none());
    }

    #[test]
    fn choice_extraction() {
        let ok = json!({"choices": [{"message": {"role": "assistant", "content": " Dogs "}}]});
        assert_eq!(first_choice(&ok).unwrap(), " Dogs ");
        assert!(matches!(first_choice(&json!({"choices": []})), Err(LlmError::MalformedResponse(_))));
    }
}
