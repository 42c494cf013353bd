//! Retry wrapper with exponential backoff.

use std::sync::atomic::{AtomicU32, Ordering};
use std::time::Duration;

use rand::Rng;

use super::{ChatBackend, ChatRequest, ChatResponse, LlmError};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Total attempts including the first one.
    pub max_attempts: u32,
    pub base_delay: Duration,
    /// Uniform offset in `[-jitter, +jitter]` added to each delay; zero
    /// keeps runs deterministic.
    pub jitter: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, base_delay: Duration::from_millis(500), jitter: Duration::ZERO }
    }
}

/// Injectable clock so backoff is testable without waiting.
pub trait Sleeper: Send + Sync {
    fn sleep(&self, duration: Duration);
}

pub struct ThreadSleeper;

impl Sleeper for ThreadSleeper {
    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

/// Retries retryable errors (network, rate limit) with delays of
/// `base_delay * 2^(failure - 1) ± jitter`; fatal errors pass straight
/// through. The attempt count of the last call is observable for tests and
/// run summaries.
pub struct RetryBackend<B> {
    inner: B,
    policy: RetryPolicy,
    sleeper: Box<dyn Sleeper>,
    last_attempts: AtomicU32,
}

impl<B: ChatBackend> RetryBackend<B> {
    pub fn new(inner: B, policy: RetryPolicy) -> Self {
        Self::with_sleeper(inner, policy, Box::new(ThreadSleeper))
    }

    pub fn with_sleeper(inner: B, policy: RetryPolicy, sleeper: Box<dyn Sleeper>) -> Self {
        assert!(policy.max_attempts >= 1, "retry policy needs at least one attempt");
        Self { inner, policy, sleeper, last_attempts: AtomicU32::new(0) }
    }

    pub fn last_attempts(&self) -> u32 {
        self.last_attempts.load(Ordering::SeqCst)
    }

    fn backoff_delay(&self, failure: u32) -> Duration {
        let exponential = self
            .policy
            .base_delay
            .saturating_mul(2u32.saturating_pow(failure.saturating_sub(1)));
        if self.policy.jitter.is_zero() {
            return exponential;
        }
        let jitter_ns = self.policy.jitter.as_nanos() as i128;
        let offset = rand::thread_rng().gen_range(-jitter_ns..=jitter_ns);
        let delayed = exponential.as_nanos() as i128 + offset;
        Duration::from_nanos(delayed.max(0) as u64)
    }
}

impl<B: ChatBackend> ChatBackend for RetryBackend<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        for attempt in 1..=self.policy.max_attempts {
            self.last_attempts.store(attempt, Ordering::SeqCst);
            match self.inner.complete(request) {
                Ok(response) => return Ok(response),
                Err(err) if err.is_retryable() => {
                    if attempt == self.policy.max_attempts {
                        return Err(LlmError::RetriesExhausted {
                            attempts: attempt,
                            source: Box::new(err),
                        });
                    }
                    self.sleeper.sleep(self.backoff_delay(attempt));
                }
                Err(fatal) => return Err(fatal),
            }
        }
        unreachable!("loop returns on the last attempt")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ScriptedBackend;
    use std::sync::atomic::AtomicU32;
    use std::sync::{Arc, Mutex};

    struct RecordingSleeper(Arc<Mutex<Vec<Duration>>>);

    impl Sleeper for RecordingSleeper {
        fn sleep(&self, duration: Duration) {
            self.0.lock().unwrap().push(duration);
        }
    }

    struct FailTimes {
        failures: AtomicU32,
        budget: u32,
    }

    impl ChatBackend for FailTimes {
        fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
            if self.failures.fetch_add(1, Ordering::SeqCst) < self.budget {
                Err(LlmError::RateLimited { retry_after: None })
            } else {
                ScriptedBackend::always("ok").complete(request)
            }
        }
    }

    fn request() -> ChatRequest {
        ChatRequest::single_turn("m", None, "hi", 0.0, 32)
    }

    fn policy(max_attempts: u32) -> RetryPolicy {
        RetryPolicy { max_attempts, base_delay: Duration::from_millis(100), jitter: Duration::ZERO }
    }

    #[test]
    fn exhausts_with_doubling_delays() {
        let sleeps = Arc::new(Mutex::new(Vec::new()));
        let backend = RetryBackend::with_sleeper(
            FailTimes { failures: AtomicU32::new(0), budget: u32::MAX },
            policy(4),
            Box::new(RecordingSleeper(Arc::clone(&sleeps))),
        );
        let err = backend.complete(&request()).unwrap_err();
        match err {
            LlmError::RetriesExhausted { attempts, source } => {
                assert_eq!(attempts, 4);
                assert!(matches!(*source, LlmError::RateLimited { .. }));
            }
            other => panic!("unexpected error: {other}"),
        }
        let recorded = sleeps.lock().unwrap().clone();
        assert_eq!(
            recorded,
            vec![Duration::from_millis(100), Duration::from_millis(200), Duration::from_millis(400)]
        );
    }

    #[test]
    fn two_failures_then_success_records_three_attempts() {
        let sleeps = Arc::new(Mutex::new(Vec::new()));
        let backend = RetryBackend::with_sleeper(
            FailTimes { failures: AtomicU32::new(0), budget: 2 },
            policy(5),
            Box::new(RecordingSleeper(Arc::clone(&sleeps))),
        );
        let response = backend.complete(&request()).unwrap();
        assert_eq!(response.content, "ok");
        assert_eq!(backend.last_attempts(), 3);
        assert_eq!(sleeps.lock().unwrap().len(), 2);
    }

    #[test]
    fn fatal_errors_pass_through_without_retry() {
        struct AlwaysAuth;
        impl ChatBackend for AlwaysAuth {
            fn complete(&self, _: &ChatRequest) -> Result<ChatResponse, LlmError> {
                Err(LlmError::Auth("denied".into()))
            }
        }
        let sleeps = Arc::new(Mutex::new(Vec::new()));
        let backend = RetryBackend::with_sleeper(
            AlwaysAuth,
            policy(4),
            Box::new(RecordingSleeper(Arc::clone(&sleeps))),
        );
        assert!(matches!(backend.complete(&request()), Err(LlmError::Auth(_))));
        assert_eq!(backend.last_attempts(), 1);
        assert!(sleeps.lock().unwrap().is_empty());
    }

    #[test]
    fn success_on_first_attempt_sleeps_never() {
        let sleeps = Arc::new(Mutex::new(Vec::new()));
        let backend = RetryBackend::with_sleeper(
            ScriptedBackend::always("hello"),
            policy(3),
            Box::new(RecordingSleeper(Arc::clone(&sleeps))),
        );
        assert_eq!(backend.complete(&request()).unwrap().content, "hello");
        assert_eq!(backend.last_attempts(), 1);
        assert!(sleeps.lock().unwrap().is_empty());
    }
}
