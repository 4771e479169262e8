//! Uniform chat-completion interface over remote model endpoints and
//! deterministic mock backends.

mod http;
mod mock;
mod rate_limit;

pub use http::{
    api_key_from_env, HttpBackend, HttpBackendConfig, HttpTransport, ReqwestTransport, RetryPolicy,
};
pub use mock::{ScriptedBackend, StanceMockBackend};
pub use rate_limit::{RateLimit, RateLimiter};

use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        ChatMessage {
            role,
            content: content.into(),
        }
    }
}

/// Sampling parameters forwarded to the completion endpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling {
            temperature: 0.7,
            max_tokens: 120,
        }
    }
}

/// One chat-completion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub sampling: Sampling,
}

impl ChatRequest {
    pub fn new(
        model_id: impl Into<String>,
        messages: Vec<ChatMessage>,
        sampling: Sampling,
    ) -> Self {
        ChatRequest {
            model_id: model_id.into(),
            messages,
            sampling,
        }
    }
}

/// A successful completion with retry provenance.
#[derive(Debug, Clone)]
pub struct CompletionResult {
    pub text: String,
    pub latency: Duration,
    pub attempt_count: u32,
    pub backend_id: String,
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("backend `{backend_id}` exhausted after {attempts} attempts: {last_error}")]
    Exhausted {
        backend_id: String,
        attempts: u32,
        last_error: String,
    },
    #[error("backend `{backend_id}` rejected credentials (HTTP {status})")]
    Auth { backend_id: String, status: u16 },
    #[error("backend `{backend_id}` returned an empty completion")]
    EmptyCompletion { backend_id: String },
    #[error("backend `{backend_id}` request failed: {message}")]
    Request { backend_id: String, message: String },
}

/// A chat-completion provider. Implementations are shareable across
/// threads; rate limiting and retry state are internal.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, request: &ChatRequest) -> Result<CompletionResult, BackendError>;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_defaults_match_the_documented_values() {
        let sampling = Sampling::default();
        assert_eq!(sampling.temperature, 0.7);
        assert_eq!(sampling.max_tokens, 120);
    }
}
