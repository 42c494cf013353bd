//! Deterministic scripted backend for tests and offline runs.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::{estimate_usage, fingerprint, ChatBackend, ChatRequest, ChatResponse, LlmError};

type ResponderFn = Box<dyn Fn(&ChatRequest) -> Option<String> + Send + Sync>;

/// Answers from, in order: an exact fingerprint table, a rule closure, then
/// a default response. A request nothing matches is a [`LlmError::Malformed`]
/// so silent scripting gaps cannot skew a run.
#[derive(Default)]
pub struct ScriptedBackend {
    by_fingerprint: HashMap<String, String>,
    rule: Option<ResponderFn>,
    default_response: Option<String>,
    calls: AtomicU64,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Backend that answers every request with the same text.
    pub fn always(response: impl Into<String>) -> Self {
        Self { default_response: Some(response.into()), ..Self::default() }
    }

    /// Backend driven by a closure; `None` falls through to the default.
    pub fn with_rule(rule: impl Fn(&ChatRequest) -> Option<String> + Send + Sync + 'static) -> Self {
        Self { rule: Some(Box::new(rule)), ..Self::default() }
    }

    /// Pin an exact response for one request fingerprint.
    pub fn respond_to(mut self, fp: impl Into<String>, response: impl Into<String>) -> Self {
        self.by_fingerprint.insert(fp.into(), response.into());
        self
    }

    pub fn with_default(mut self, response: impl Into<String>) -> Self {
        self.default_response = Some(response.into());
        self
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    fn respond(&self, request: &ChatRequest) -> Option<String> {
        if let Some(content) = self.by_fingerprint.get(&fingerprint(request)) {
            return Some(content.clone());
        }
        if let Some(rule) = &self.rule {
            if let Some(content) = rule(request) {
                return Some(content);
            }
        }
        self.default_response.clone()
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        request.validate()?;
        match self.respond(request) {
            Some(content) => Ok(ChatResponse {
                usage: estimate_usage(request, &content),
                finish_reason: "stop".into(),
                content,
            }),
            None => Err(LlmError::Malformed(format!(
                "no scripted response for fingerprint {}",
                fingerprint(request)
            ))),
        }
    }
}
