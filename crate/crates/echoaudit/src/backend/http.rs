//! OpenAI-compatible chat-completions client with retry, backoff, and
//! rate limiting.
//!
//! Credentials come exclusively from the environment: `ECHOAUDIT_API_KEY`,
//! or `ECHOAUDIT_API_KEY_<BACKEND_ID>` (id uppercased, `-` mapped to `_`)
//! for a per-backend override. Config files never carry secrets.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::rate_limit::{RateLimit, RateLimiter};
use super::{Backend, BackendError, ChatRequest, CompletionResult};

/// Exponential backoff: attempt n sleeps `base * factor^(n-1)`, scaled by
/// a jitter multiplier in [1.0, 1.5) so delays stay nondecreasing across
/// attempts of one logical request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub factor: f64,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_secs(1),
            factor: 2.0,
            jitter: true,
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32, jitter_unit: f64) -> Duration {
        let exp = self.base_delay.as_secs_f64() * self.factor.powi(attempt as i32 - 1);
        let mult = if self.jitter {
            1.0 + 0.5 * jitter_unit
        } else {
            1.0
        };
        Duration::from_secs_f64(exp * mult)
    }
}

#[derive(Debug, Clone)]
pub struct HttpBackendConfig {
    /// Identifier recorded in results and used for the per-backend key
    /// environment variable.
    pub id: String,
    /// Base URL; `/chat/completions` is appended.
    pub endpoint: String,
    pub retry: RetryPolicy,
    pub rate_limit: Option<RateLimit>,
    pub request_timeout: Duration,
}

impl HttpBackendConfig {
    pub fn new(id: impl Into<String>, endpoint: impl Into<String>) -> Self {
        HttpBackendConfig {
            id: id.into(),
            endpoint: endpoint.into(),
            retry: RetryPolicy::default(),
            rate_limit: None,
            request_timeout: Duration::from_secs(60),
        }
    }
}

/// Transport result: HTTP status and response body.
pub type TransportResponse = (u16, String);

/// The wire layer under [`HttpBackend`], separated so the retry contract
/// is testable without sockets.
pub trait HttpTransport: Send + Sync {
    fn post_chat(
        &self,
        url: &str,
        api_key: Option<&str>,
        body: &serde_json::Value,
        timeout: Duration,
    ) -> Result<TransportResponse, String>;
}

/// Blocking reqwest transport used in production.
pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new() -> Self {
        ReqwestTransport {
            client: reqwest::blocking::Client::new(),
        }
    }
}

impl Default for ReqwestTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl HttpTransport for ReqwestTransport {
    fn post_chat(
        &self,
        url: &str,
        api_key: Option<&str>,
        body: &serde_json::Value,
        timeout: Duration,
    ) -> Result<TransportResponse, String> {
        let mut request = self.client.post(url).timeout(timeout).json(body);
        if let Some(key) = api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| e.to_string())?;
        let status = response.status().as_u16();
        let text = response.text().map_err(|e| e.to_string())?;
        Ok((status, text))
    }
}

/// Reads the API key for a backend id from the environment.
pub fn api_key_from_env(backend_id: &str) -> Option<String> {
    let suffix: String = backend_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_uppercase()
            } else {
                '_'
            }
        })
        .collect();
    std::env::var(format!("ECHOAUDIT_API_KEY_{suffix}"))
        .or_else(|_| std::env::var("ECHOAUDIT_API_KEY"))
        .ok()
        .filter(|k| !k.is_empty())
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    api_key: Option<String>,
    transport: Box<dyn HttpTransport>,
    limiter: Option<RateLimiter>,
    jitter_rng: Mutex<ChaCha8Rng>,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Self {
        let api_key = api_key_from_env(&config.id);
        Self::with_transport(config, api_key, Box::new(ReqwestTransport::new()))
    }

    pub fn with_transport(
        config: HttpBackendConfig,
        api_key: Option<String>,
        transport: Box<dyn HttpTransport>,
    ) -> Self {
        let limiter = config.rate_limit.map(RateLimiter::new);
        HttpBackend {
            api_key,
            transport,
            limiter,
            jitter_rng: Mutex::new(ChaCha8Rng::from_os_rng()),
            config,
        }
    }

    fn url(&self) -> String {
        format!(
            "{}/chat/completions",
            self.config.endpoint.trim_end_matches('/')
        )
    }

    fn sleep_before_retry(&self, attempt: u32) {
        let unit: f64 = self.jitter_rng.lock().unwrap().random();
        std::thread::sleep(self.config.retry.delay(attempt, unit));
    }
}

/// Outcome of a single attempt, before the retry loop decides what to do.
enum Attempt {
    Success(String),
    Transient(String),
    Empty,
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.config.id
    }

    fn complete(&self, request: &ChatRequest) -> Result<CompletionResult, BackendError> {
        let body = json!({
            "model": request.model_id,
            "messages": request.messages.iter().map(|m| json!({
                "role": m.role.as_str(),
                "content": m.content,
            })).collect::<Vec<_>>(),
            "temperature": request.sampling.temperature,
            "max_tokens": request.sampling.max_tokens,
        });
        let url = self.url();
        let started = Instant::now();
        let mut last_empty = false;
        let mut last_error = String::from("no attempts made");

        for attempt in 1..=self.config.retry.max_attempts {
            if attempt > 1 {
                self.sleep_before_retry(attempt - 1);
            }
            if let Some(limiter) = &self.limiter {
                limiter.acquire();
            }
            let outcome = match self.transport.post_chat(
                &url,
                self.api_key.as_deref(),
                &body,
                self.config.request_timeout,
            ) {
                Ok((status, text)) => match status {
                    200 => match extract_content(&text) {
                        Some(content) if !content.is_empty() => Attempt::Success(content),
                        _ => Attempt::Empty,
                    },
                    401 | 403 => {
                        return Err(BackendError::Auth {
                            backend_id: self.config.id.clone(),
                            status,
                        })
                    }
                    429 | 500..=599 => Attempt::Transient(format!("HTTP {status}: {text}")),
                    _ => {
                        return Err(BackendError::Request {
                            backend_id: self.config.id.clone(),
                            message: format!("HTTP {status}: {text}"),
                        })
                    }
                },
                Err(err) => Attempt::Transient(err),
            };

            match outcome {
                Attempt::Success(text) => {
                    return Ok(CompletionResult {
                        text,
                        latency: started.elapsed(),
                        attempt_count: attempt,
                        backend_id: self.config.id.clone(),
                    })
                }
                Attempt::Empty => {
                    last_empty = true;
                    last_error = "empty completion".to_string();
                }
                Attempt::Transient(err) => {
                    last_empty = false;
                    last_error = err;
                }
            }
        }

        if last_empty {
            Err(BackendError::EmptyCompletion {
                backend_id: self.config.id.clone(),
            })
        } else {
            Err(BackendError::Exhausted {
                backend_id: self.config.id.clone(),
                attempts: self.config.retry.max_attempts,
                last_error,
            })
        }
    }
}

fn extract_content(body: &str) -> Option<String> {
    let value: serde_json::Value = serde_json::from_str(body).ok()?;
    value
        .get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?
        .as_str()
        .map(str::to_string)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ChatMessage, Role, Sampling};
    use std::sync::Mutex as StdMutex;

    struct TransportState {
        responses: StdMutex<Vec<Result<TransportResponse, String>>>,
        seen_bodies: StdMutex<Vec<serde_json::Value>>,
    }

    #[derive(Clone)]
    struct ScriptedTransport {
        state: std::sync::Arc<TransportState>,
    }

    impl ScriptedTransport {
        fn new(responses: Vec<Result<TransportResponse, String>>) -> Self {
            ScriptedTransport {
                state: std::sync::Arc::new(TransportState {
                    responses: StdMutex::new(responses),
                    seen_bodies: StdMutex::new(Vec::new()),
                }),
            }
        }
    }

    impl HttpTransport for ScriptedTransport {
        fn post_chat(
            &self,
            _url: &str,
            _api_key: Option<&str>,
            body: &serde_json::Value,
            _timeout: Duration,
        ) -> Result<TransportResponse, String> {
            self.state.seen_bodies.lock().unwrap().push(body.clone());
            let mut responses = self.state.responses.lock().unwrap();
            if responses.is_empty() {
                Err("transport script exhausted".to_string())
            } else {
                responses.remove(0)
            }
        }
    }

    fn ok_body(text: &str) -> String {
        json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
    }

    fn fast_config() -> HttpBackendConfig {
        let mut config = HttpBackendConfig::new("test", "http://localhost:9");
        config.retry = RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_millis(1),
            factor: 2.0,
            jitter: false,
        };
        config
    }

    fn request() -> ChatRequest {
        ChatRequest::new(
            "test-model",
            vec![ChatMessage::new(Role::User, "hi")],
            Sampling::default(),
        )
    }

    #[test]
    fn two_rate_limits_then_success_takes_three_attempts() {
        let transport = ScriptedTransport::new(vec![
            Ok((429, "slow down".into())),
            Ok((429, "slow down".into())),
            Ok((200, ok_body("hello"))),
        ]);
        let backend = HttpBackend::with_transport(fast_config(), None, Box::new(transport));
        let result = backend.complete(&request()).unwrap();
        assert_eq!(result.text, "hello");
        assert_eq!(result.attempt_count, 3);
    }

    #[test]
    fn auth_failure_is_not_retried() {
        let transport = ScriptedTransport::new(vec![Ok((401, "bad key".into()))]);
        let backend =
            HttpBackend::with_transport(fast_config(), Some("k".into()), Box::new(transport));
        match backend.complete(&request()) {
            Err(BackendError::Auth { status, .. }) => assert_eq!(status, 401),
            other => panic!("expected auth error, got {other:?}"),
        }
    }

    #[test]
    fn persistent_failures_exhaust_retries() {
        let transport = ScriptedTransport::new(vec![
            Err("connection refused".into()),
            Err("connection refused".into()),
            Err("connection refused".into()),
            Err("connection refused".into()),
            Err("connection refused".into()),
        ]);
        let backend = HttpBackend::with_transport(fast_config(), None, Box::new(transport));
        match backend.complete(&request()) {
            Err(BackendError::Exhausted { attempts, .. }) => assert_eq!(attempts, 5),
            other => panic!("expected exhaustion, got {other:?}"),
        }
    }

    #[test]
    fn empty_completions_surface_as_empty_after_retries() {
        let responses = (0..5).map(|_| Ok((200, ok_body("")))).collect();
        let backend = HttpBackend::with_transport(
            fast_config(),
            None,
            Box::new(ScriptedTransport::new(responses)),
        );
        match backend.complete(&request()) {
            Err(BackendError::EmptyCompletion { .. }) => {}
            other => panic!("expected empty completion, got {other:?}"),
        }
    }

    #[test]
    fn request_body_follows_the_chat_completions_shape() {
        let transport = ScriptedTransport::new(vec![Ok((200, ok_body("ok")))]);
        let backend = HttpBackend::with_transport(fast_config(), None, Box::new(transport.clone()));
        backend.complete(&request()).unwrap();
        let bodies = transport.state.seen_bodies.lock().unwrap();
        assert_eq!(bodies.len(), 1);
        assert_eq!(bodies[0]["model"], "test-model");
        assert_eq!(bodies[0]["messages"][0]["role"], "user");
        assert_eq!(bodies[0]["messages"][0]["content"], "hi");
        assert_eq!(bodies[0]["temperature"], 0.7);
        assert_eq!(bodies[0]["max_tokens"], 120);
    }

    #[test]
    fn backoff_delays_are_nondecreasing() {
        let policy = RetryPolicy {
            max_attempts: 6,
            base_delay: Duration::from_millis(100),
            factor: 2.0,
            jitter: true,
        };
        // Worst case for monotonicity: max jitter on attempt n, min on n+1.
        for attempt in 1..5 {
            let longest_earlier = policy.delay(attempt, 0.999_999);
            let shortest_later = policy.delay(attempt + 1, 0.0);
            assert!(
                shortest_later >= longest_earlier,
                "attempt {attempt}: {longest_earlier:?} > {shortest_later:?}"
            );
        }
    }

    #[test]
    fn api_key_env_lookup_prefers_the_backend_specific_variable() {
        // Process-global env: use unique names to avoid test interference.
        std::env::set_var("ECHOAUDIT_API_KEY_UNIT_TEST_A", "specific");
        assert_eq!(api_key_from_env("unit-test-a").as_deref(), Some("specific"));
        std::env::remove_var("ECHOAUDIT_API_KEY_UNIT_TEST_A");
    }
}
