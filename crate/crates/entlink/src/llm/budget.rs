//! Request and token budgets enforced before dispatch.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::{ChatBackend, ChatRequest, ChatResponse, LlmError, TokenUsage};

/// Shared spending caps. Requests are authorized *before* they are sent, so a
/// run stops issuing new calls the moment either cap is hit; tokens are
/// recorded after completion from reported usage.
#[derive(Debug)]
pub struct RequestBudget {
    max_requests: Option<u64>,
    max_tokens: Option<u64>,
    requests: AtomicU64,
    tokens: AtomicU64,
}

impl RequestBudget {
    pub fn new(max_requests: Option<u64>, max_tokens: Option<u64>) -> Self {
        Self { max_requests, max_tokens, requests: AtomicU64::new(0), tokens: AtomicU64::new(0) }
    }

    pub fn unlimited() -> Self {
        Self::new(None, None)
    }

    /// Reserves one request slot, failing if either cap is already exhausted.
    pub fn authorize(&self) -> Result<(), LlmError> {
        if let Some(cap) = self.max_tokens {
            if self.tokens.load(Ordering::SeqCst) >= cap {
                return Err(LlmError::BudgetExceeded(format!("token budget of {cap} spent")));
            }
        }
        if let Some(cap) = self.max_requests {
            let reserved = self.requests.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |used| {
                if used < cap {
                    Some(used + 1)
                } else {
                    None
                }
            });
            if reserved.is_err() {
                return Err(LlmError::BudgetExceeded(format!("request budget of {cap} spent")));
            }
        } else {
            self.requests.fetch_add(1, Ordering::SeqCst);
        }
        Ok(())
    }

    pub fn record_usage(&self, usage: &TokenUsage) {
        self.tokens.fetch_add(usage.total(), Ordering::SeqCst);
    }

    pub fn used_requests(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn used_tokens(&self) -> u64 {
        self.tokens.load(Ordering::SeqCst)
    }
}

/// Backend wrapper that consults a shared [`RequestBudget`] around every call.
pub struct BudgetedBackend<B> {
    inner: B,
    budget: Arc<RequestBudget>,
}

impl<B: ChatBackend> BudgetedBackend<B> {
    pub fn new(inner: B, budget: Arc<RequestBudget>) -> Self {
        Self { inner, budget }
    }

    pub fn budget(&self) -> &RequestBudget {
        &self.budget
    }
}

impl<B: ChatBackend> ChatBackend for BudgetedBackend<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        self.budget.authorize()?;
        let response = self.inner.complete(request)?;
        self.budget.record_usage(&response.usage);
        Ok(response)
    }
}
