//! Embeddings over the OpenAI-style `POST {base}/embeddings` API.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{EmbedError, EmbeddingProvider, EmbeddingVector};
use crate::http::{join_url, HttpError, JsonEndpoint, RetryPolicy, ThrottleConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteEmbedderConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub retry: RetryPolicy,
    pub throttle: ThrottleConfig,
}

impl Default for RemoteEmbedderConfig {
    fn default() -> Self {
        Self {
            base_url: "https://api.openai.com/v1".into(),
            model: "text-embedding-ada-002".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            retry: RetryPolicy::default(),
            throttle: ThrottleConfig::default(),
        }
    }
}

pub struct RemoteEmbedder {
    endpoint: JsonEndpoint,
    model: String,
    provider_id: String,
}

impl RemoteEmbedder {
    pub fn new(config: &RemoteEmbedderConfig) -> Result<Self, EmbedError> {
        let key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        Self::with_key(config, key)
    }

    pub fn with_key(config: &RemoteEmbedderConfig, api_key: Option<String>) -> Result<Self, EmbedError> {
        let endpoint = JsonEndpoint::new(
            join_url(&config.base_url, "embeddings"),
            api_key,
            config.retry.clone(),
            config.throttle.clone(),
        )
        .map_err(|e| provider_err(e, 0))?;
        Ok(Self {
            endpoint,
            model: config.model.clone(),
            provider_id: format!("http:{}", config.base_url.trim_end_matches('/')),
        })
    }
}

fn provider_err(e: HttpError, retries: u32) -> EmbedError {
    let retries = match &e {
        HttpError::Exhausted { attempts, .. } => attempts.saturating_sub(1),
        _ => retries,
    };
    EmbedError::Provider { message: e.to_string(), retries }
}

fn parse_vectors(body: &Value, expected: usize) -> Result<Vec<EmbeddingVector>, EmbedError> {
    let malformed = |m: &str| EmbedError::Provider { message: format!("malformed response: {m}"), retries: 0 };
    let data = body.get("data").and_then(Value::as_array).ok_or_else(|| malformed("no data array"))?;
    let mut slots: Vec<Option<EmbeddingVector>> = vec![None; expected];
    for (pos, item) in data.iter().enumerate() {
        let idx = item.get("index").and_then(Value::as_u64).map_or(pos, |i| i as usize);
        let values: Vec<f64> = item
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| malformed("item without embedding"))?
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| malformed("non-numeric embedding entry")))
            .collect::<Result<_, _>>()?;
        let slot = slots.get_mut(idx).ok_or_else(|| malformed("index out of range"))?;
        *slot = Some(EmbeddingVector::new(values)?);
    }
    let got = slots.iter().filter(|s| s.is_some()).count();
    if got != expected {
        return Err(EmbedError::CountMismatch { expected, got });
    }
    Ok(slots.into_iter().flatten().collect())
}

impl EmbeddingProvider for RemoteEmbedder {
    fn provider_id(&self) -> &str {
        &self.provider_id
    }

    fn model_id(&self) -> &str {
        &self.model
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let payload = json!({ "model": self.model, "input": texts });
        let outcome = self.endpoint.post(&payload).map_err(|e| provider_err(e, 0))?;
        parse_vectors(&outcome.body, texts.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_out_of_order_data() {
        let body = json!({"data": [
            {"index": 1, "embedding": [0.0, 1.0]},
            {"index": 0, "embedding": [1.0, 0.0]},
        ]});
        let v = parse_vectors(&body, 2).unwrap();
        assert_eq!(v[0].values(), &[1.0, 0.0]);
        assert_eq!(v[1].values(), &[0.0, 1.0]);
    }

    #[test]
    fn rejects_short_or_zero_responses() {
        let short = json!({"data": [{"index": 0, "embedding": [1.0]}]});
        assert!(matches!(parse_vectors(&short, 2), Err(EmbedError::CountMismatch { .. })));
        let zero = json!({"data": [{"embedding": [0.0, 0.0]}]});
        assert!(matches!(parse_vectors(&zero, 1), Err(EmbedError::InvalidVector(_))));
        assert!(parse_vectors(&json!({}), 1).is_err());
    }
}
