//! HTTP backend for OpenAI-style chat completion endpoints.

use std::time::Duration;

use serde::Deserialize;

use super::{ChatBackend, ChatMessage, ChatRequest, ChatResponse, LlmError, TokenUsage};

/// Environment variable consulted for the bearer token.
pub const API_KEY_ENV: &str = "ENTLINK_API_KEY";

const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

/// Client for `POST {base_url}/v1/chat/completions`.
pub struct HttpBackend {
    agent: ureq::Agent,
    base_url: String,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(base_url: &str, api_key: Option<String>) -> Self {
        Self::with_timeout(base_url, api_key, DEFAULT_TIMEOUT)
    }

    /// Reads the API key from [`API_KEY_ENV`]; requests are sent without
    /// authentication when it is unset.
    pub fn from_env(base_url: &str) -> Self {
        Self::new(base_url, std::env::var(API_KEY_ENV).ok())
    }

    pub fn with_timeout(base_url: &str, api_key: Option<String>, timeout: Duration) -> Self {
        let mut base = base_url.trim_end_matches('/').to_string();
        if let Some(stripped) = base.strip_suffix("/v1") {
            base = stripped.to_string();
        }
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        Self { agent, base_url: base, api_key }
    }

    fn endpoint(&self) -> String {
        format!("{}/v1/chat/completions", self.base_url)
    }
}

#[derive(Debug, serde::Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Debug, Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Debug, Deserialize)]
struct WireMessage {
    content: String,
}

#[derive(Debug, Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

fn classify_status(status: u16, response: ureq::Response) -> LlmError {
    match status {
        401 | 403 => LlmError::Auth(format!("server returned {status}")),
        429 => {
            let retry_after = response
                .header("retry-after")
                .and_then(|v| v.trim().parse::<u64>().ok())
                .map(Duration::from_secs);
            LlmError::RateLimited { retry_after }
        }
        408 | 500..=599 => LlmError::Network(format!("server returned {status}")),
        other => {
            let body = response.into_string().unwrap_or_default();
            LlmError::Malformed(format!("server returned {other}: {}", body.trim()))
        }
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        let body = WireRequest {
            model: &request.model,
            messages: &request.messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        let mut http = self.agent.post(&self.endpoint());
        if let Some(key) = &self.api_key {
            http = http.set("authorization", &format!("Bearer {key}"));
        }
        let response = match http.send_json(&body) {
            Ok(response) => response,
            Err(ureq::Error::Status(status, response)) => {
                return Err(classify_status(status, response))
            }
            Err(ureq::Error::Transport(err)) => return Err(LlmError::Network(err.to_string())),
        };
        let wire: WireResponse = response
            .into_json()
            .map_err(|err| LlmError::Malformed(format!("invalid response body: {err}")))?;
        let choice = wire
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| LlmError::Malformed("response contained no choices".to_string()))?;
        let usage = wire
            .usage
            .map(|u| TokenUsage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
            })
            .unwrap_or_else(|| super::estimate_usage(request, &choice.message.content));
        Ok(ChatResponse {
            content: choice.message.content,
            finish_reason: choice.finish_reason.unwrap_or_else(|| "stop".to_string()),
            usage,
        })
    }
}
