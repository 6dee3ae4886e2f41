//! Offline chat providers.

use std::collections::{BTreeSet, VecDeque};
use std::sync::Mutex;
use std::time::Duration;

use serde_json::json;

use super::{ChatExchange, ChatProvider, ChatRequest, GenerationConfig, LlmError};
use crate::text::tokens;

fn exchange(request: &ChatRequest, response: String, kind: &str) -> ChatExchange {
    ChatExchange {
        system_text: request.system_text.clone(),
        user_text: request.user_text.clone(),
        response_text: response,
        latency: Duration::ZERO,
        provider_meta: json!({ "provider": kind }),
    }
}

/// Plays back a fixed queue of responses, one per call.
pub struct ScriptedMock {
    queue: Mutex<VecDeque<String>>,
}

impl ScriptedMock {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self { queue: Mutex::new(responses.into_iter().map(Into::into).collect()) }
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().unwrap().len()
    }
}

impl ChatProvider for ScriptedMock {
    fn name(&self) -> &str {
        "mock-scripted"
    }

    fn send(&self, request: &ChatRequest, _: &GenerationConfig) -> Result<ChatExchange, LlmError> {
        let next = self.queue.lock().unwrap().pop_front();
        match next {
            Some(text) => Ok(exchange(request, text, "mock-scripted")),
            None => Err(LlmError::ProviderExhausted { attempts: 1, last: "script is empty".into() }),
        }
    }
}

/// Number of distinct candidate tokens that also occur in `text`.
pub fn overlap_score(candidate: &str, text: &str) -> usize {
    let text_tokens: BTreeSet<String> = tokens(text).collect();
    tokens(candidate).collect::<BTreeSet<_>>().intersection(&text_tokens).count()
}

/// Answers with the offered candidate sharing the most tokens with the user
/// text; ties go to the earliest candidate.
#[derive(Debug, Default)]
pub struct CandidateEchoMock;

impl ChatProvider for CandidateEchoMock {
    fn name(&self) -> &str {
        "mock-echo"
    }

    fn send(&self, request: &ChatRequest, _: &GenerationConfig) -> Result<ChatExchange, LlmError> {
        let mut best: Option<(&String, usize)> = None;
        for c in &request.candidates {
            let score = overlap_score(c, &request.user_text);
            if best.is_none_or(|(_, s)| score > s) {
                best = Some((c, score));
            }
        }
        let (answer, _) = best.ok_or_else(|| {
            LlmError::InvalidRequest("candidate-echo mock needs a candidate list".into())
        })?;
        Ok(exchange(request, answer.clone(), "mock-echo"))
    }
}

/// Responds with whatever the closure returns.
pub struct FnMock<F> {
    f: F,
}

impl<F> FnMock<F>
where
    F: Fn(&ChatRequest) -> Result<String, LlmError> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        Self { f }
    }
}

impl<F> ChatProvider for FnMock<F>
where
    F: Fn(&ChatRequest) -> Result<String, LlmError> + Send + Sync,
{
    fn name(&self) -> &str {
        "mock-fn"
    }

    fn send(&self, request: &ChatRequest, _: &GenerationConfig) -> Result<ChatExchange, LlmError> {
        (self.f)(request).map(|text| exchange(request, text, "mock-fn"))
    }
}

/// Wraps a provider and keeps every request it forwards.
pub struct RecordingProvider<'a> {
    inner: &'a dyn ChatProvider,
    seen: Mutex<Vec<ChatRequest>>,
}

impl<'a> RecordingProvider<'a> {
    pub fn new(inner: &'a dyn ChatProvider) -> Self {
        Self { inner, seen: Mutex::new(Vec::new()) }
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.seen.lock().unwrap().clone()
    }
}

impl ChatProvider for RecordingProvider<'_> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn send(&self, request: &ChatRequest, config: &GenerationConfig) -> Result<ChatExchange, LlmError> {
        self.seen.lock().unwrap().push(request.clone());
        self.inner.send(request, config)
    }
}
