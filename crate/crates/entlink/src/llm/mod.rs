//! Chat-completion backends: a live OpenAI-compatible client, a scripted
//! deterministic backend for tests, record/replay cassettes, retry with
//! exponential backoff, and per-run request budgets.

mod budget;
mod cassette;
mod http;
mod retry;
mod scripted;

pub use budget::{BudgetedBackend, RequestBudget};
pub use cassette::{load_cassette, CassetteEntry, RecordingBackend, ReplayBackend};
pub use http::{HttpBackend, API_KEY_ENV};
pub use retry::{RetryBackend, RetryPolicy, Sleeper, ThreadSleeper};
pub use scripted::ScriptedBackend;

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

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

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    /// A single-turn request with an optional system message.
    pub fn single_turn(
        model: impl Into<String>,
        system: Option<&str>,
        user: impl Into<String>,
        temperature: f64,
        max_tokens: u32,
    ) -> Self {
        let mut messages = Vec::new();
        if let Some(system) = system {
            messages.push(ChatMessage::system(system));
        }
        messages.push(ChatMessage::user(user));
        Self { model: model.into(), messages, temperature, max_tokens }
    }

    /// Checks the request invariants: at least one message, the last one
    /// from the user, a finite non-negative temperature, and a positive
    /// token cap.
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::Malformed("request has no messages".into()));
        }
        if self.messages.last().map(|m| m.role) != Some(Role::User) {
            return Err(LlmError::Malformed("last message must be from the user".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(LlmError::Malformed(format!("bad temperature {}", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::Malformed("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl TokenUsage {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub finish_reason: String,
    pub usage: TokenUsage,
}

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    /// Transport-level failure or 5xx; retryable.
    #[error("network error: {0}")]
    Network(String),
    /// 429 from the server; retryable.
    #[error("rate limited")]
    RateLimited { retry_after: Option<Duration> },
    /// 401/403; fatal.
    #[error("authentication failed: {0}")]
    Auth(String),
    /// Invalid request or a response that does not parse; fatal.
    #[error("malformed request or response: {0}")]
    Malformed(String),
    /// The per-run budget would be exceeded; raised before dispatch.
    #[error("request budget exceeded: {0}")]
    BudgetExceeded(String),
    #[error("retries exhausted after {attempts} attempts: {source}")]
    RetriesExhausted {
        attempts: u32,
        #[source]
        source: Box<LlmError>,
    },
    #[error("cassette has no entry for fingerprint {0}")]
    CassetteMiss(String),
    #[error("cassette corrupt: {0}")]
    CassetteCorrupt(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl LlmError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, LlmError::Network(_) | LlmError::RateLimited { .. })
    }
}

/// A chat-completion backend. Implementations are shareable across threads;
/// callers bound in-flight requests themselves.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for &T {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(request)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for Box<T> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(request)
    }
}

/// Stable fingerprint of the semantic request content — model, messages,
/// and temperature. Insensitive to `max_tokens`, so replay keys survive
/// token-cap tweaks.
pub fn fingerprint(request: &ChatRequest) -> String {
    #[derive(Serialize)]
    struct View<'a> {
        model: &'a str,
        messages: &'a [ChatMessage],
        temperature: f64,
    }
    let canonical = serde_json::to_vec(&View {
        model: &request.model,
        messages: &request.messages,
        temperature: request.temperature,
    })
    .expect("fingerprint view serializes");
    hex::encode(Sha256::digest(&canonical))
}

/// Deterministic stand-in usage (characters / 4, rounded up) for backends
/// that do not report real token counts.
pub(crate) fn estimate_usage(request: &ChatRequest, content: &str) -> TokenUsage {
    let prompt_chars: usize = request.messages.iter().map(|m| m.content.chars().count()).sum();
    TokenUsage {
        prompt_tokens: (prompt_chars as u64).div_ceil(4),
        completion_tokens: (content.chars().count() as u64).div_ceil(4),
    }
}

/// Wrapper that counts how many requests reach the inner backend.
pub struct CountingBackend<B> {
    inner: B,
    calls: AtomicU64,
}

impl<B: ChatBackend> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self { inner, calls: AtomicU64::new(0) }
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<B: ChatBackend> ChatBackend for CountingBackend<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(request)
    }
}
