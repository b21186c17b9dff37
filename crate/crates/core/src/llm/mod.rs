//! Language-model gateway.
//!
//! [`LlmGateway`] sits between the orchestration code and a [`LlmProvider`].
//! It validates requests, retries transient failures with exponential
//! backoff, and caches responses keyed by a digest of
//! `(model_id, temperature, messages)`.

mod http;
mod mock;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpProvider, HttpProviderConfig};
pub use mock::{MockEntry, MockProvider, MockScenario, ScenarioError};

use crate::framed::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageRole {
    System,
    User,
    Assistant,
    Tool,
}

impl MessageRole {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::System => "system",
            Self::User => "user",
            Self::Assistant => "assistant",
            Self::Tool => "tool",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: MessageRole,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: MessageRole::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: MessageRole::User,
            content: content.into(),
        }
    }
}

/// Why a request is being made. Rendered into the prompt header so scripted
/// scenarios can match on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Purpose {
    Route,
    Validate,
    Codegen,
    Metadata,
    Summarize,
}

impl Purpose {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Route => "route",
            Self::Validate => "validate",
            Self::Codegen => "codegen",
            Self::Metadata => "metadata",
            Self::Summarize => "summarize",
        }
    }
}

impl fmt::Display for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub messages: Vec<ChatMessage>,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub purpose: Purpose,
    /// Session the call is made on behalf of; used for audit only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
}

impl LlmRequest {
    pub fn new(purpose: Purpose, messages: Vec<ChatMessage>) -> Self {
        Self {
            messages,
            model_id: String::from("default"),
            temperature: 0.0,
            max_tokens: 1024,
            purpose,
            session_id: None,
        }
    }

    pub fn with_session(mut self, session_id: Option<&str>) -> Self {
        self.session_id = session_id.map(str::to_string);
        self
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        let Some(first) = self.messages.first() else {
            return Err(LlmError::InvalidRequest("messages must not be empty".into()));
        };
        if !matches!(first.role, MessageRole::System | MessageRole::User) {
            return Err(LlmError::InvalidRequest(
                "first message must be a system or user message".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.temperature) || self.temperature.is_nan() {
            return Err(LlmError::InvalidRequest(format!(
                "temperature {} outside [0, 1]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Flat text form of the prompt: a `[purpose:..]` header followed by each
    /// message under a `[role]` line.
    pub fn render(&self) -> String {
        let mut out = format!("[purpose:{}]\n", self.purpose);
        for m in &self.messages {
            out.push('[');
            out.push_str(m.role.as_str());
            out.push_str("]\n");
            out.push_str(&m.content);
            out.push('\n');
        }
        out
    }

    /// Cache key. The purpose tag is deliberately not part of it.
    pub fn cache_key(&self) -> String {
        let messages = serde_json::to_string(&self.messages).unwrap_or_default();
        sha256_hex(format!("{}\u{1f}{:.6}\u{1f}{}", self.model_id, self.temperature, messages).as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LlmResponse {
    pub content: String,
    pub provider_id: String,
    pub from_cache: bool,
    pub latency_ms: u64,
}

/// Failure reported by a provider for one invocation.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ProviderError {
    #[error("transient provider failure: {0}")]
    Transient(String),
    #[error("rate limited: {0}")]
    RateLimited(String),
    #[error("provider failure: {0}")]
    Fatal(String),
    #[error("no scripted response matches the request: {0}")]
    Unmatched(String),
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("provider unavailable after {attempts} attempt(s): {last}")]
    ProviderUnavailable { attempts: u32, last: String },
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited { attempts: u32 },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
}

pub trait LlmProvider: Send + Sync {
    fn id(&self) -> &str;
    fn invoke(&self, request: &LlmRequest) -> Result<String, ProviderError>;
    /// Cheap reachability probe used by health checks.
    fn healthy(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub max_attempts: u32,
    pub base_backoff: Duration,
    pub cache_enabled: bool,
    /// `None` keeps entries for the lifetime of the process.
    pub cache_ttl: Option<Duration>,
    pub default_model: String,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            base_backoff: Duration::from_millis(250),
            cache_enabled: true,
            cache_ttl: None,
            default_model: String::from("default"),
        }
    }
}

type Observer = dyn Fn(&LlmRequest, &Result<LlmResponse, LlmError>) + Send + Sync;

pub struct LlmGateway {
    provider: Arc<dyn LlmProvider>,
    config: GatewayConfig,
    cache: Mutex<HashMap<String, (String, Instant)>>,
    observer: Option<Box<Observer>>,
}

impl fmt::Debug for LlmGateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LlmGateway")
            .field("provider", &self.provider.id())
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl LlmGateway {
    pub fn new(provider: Arc<dyn LlmProvider>, config: GatewayConfig) -> Self {
        Self {
            provider,
            config,
            cache: Mutex::new(HashMap::new()),
            observer: None,
        }
    }

    /// Installs a callback invoked after every `complete` call.
    pub fn with_observer(
        mut self,
        observer: impl Fn(&LlmRequest, &Result<LlmResponse, LlmError>) + Send + Sync + 'static,
    ) -> Self {
        self.observer = Some(Box::new(observer));
        self
    }

    pub fn provider_id(&self) -> &str {
        self.provider.id()
    }

    pub fn provider_healthy(&self) -> bool {
        self.provider.healthy()
    }

    pub fn default_model(&self) -> &str {
        &self.config.default_model
    }

    /// Builds a request with the gateway's default model.
    pub fn request(&self, purpose: Purpose, messages: Vec<ChatMessage>) -> LlmRequest {
        let mut req = LlmRequest::new(purpose, messages);
        req.model_id = self.config.default_model.clone();
        req
    }

    pub fn complete(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let result = self.complete_inner(request);
        if let Some(observer) = &self.observer {
            observer(request, &result);
        }
        result
    }

    fn complete_inner(&self, request: &LlmRequest) -> Result<LlmResponse, LlmError> {
        request.validate()?;
        let key = request.cache_key();
        if self.config.cache_enabled {
            let mut cache = self.cache.lock();
            if let Some((content, stored)) = cache.get(&key) {
                let fresh = self
                    .config
                    .cache_ttl
                    .is_none_or(|ttl| stored.elapsed() < ttl);
                if fresh {
                    return Ok(LlmResponse {
                        content: content.clone(),
                        provider_id: self.provider.id().to_string(),
                        from_cache: true,
                        latency_ms: 0,
                    });
                }
                cache.remove(&key);
            }
        }

        let max_attempts = self.config.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            let started = Instant::now();
            match self.provider.invoke(request) {
                Ok(content) => {
                    if content.trim().is_empty() {
                        return Err(LlmError::MalformedResponse("empty content".into()));
                    }
                    if self.config.cache_enabled {
                        self.cache.lock().insert(key, (content.clone(), Instant::now()));
                    }
                    let latency_ms = (started.elapsed().as_millis() as u64).max(1);
                    return Ok(LlmResponse {
                        content,
                        provider_id: self.provider.id().to_string(),
                        from_cache: false,
                        latency_ms,
                    });
                }
                Err(ProviderError::Unmatched(detail)) => {
                    return Err(LlmError::MalformedResponse(format!("unmatched request: {detail}")));
                }
                Err(ProviderError::Fatal(detail)) => {
                    return Err(LlmError::ProviderUnavailable {
                        attempts: attempt,
                        last: detail,
                    });
                }
                Err(err) => {
                    if attempt >= max_attempts {
                        return Err(match err {
                            ProviderError::RateLimited(_) => LlmError::RateLimited { attempts: attempt },
                            other => LlmError::ProviderUnavailable {
                                attempts: attempt,
                                last: other.to_string(),
                            },
                        });
                    }
                    let delay = self.config.base_backoff * 2u32.saturating_pow(attempt - 1);
                    tracing::debug!(attempt, ?delay, error = %err, "retrying provider call");
                    std::thread::sleep(delay);
                }
            }
        }
    }

    pub fn clear_cache(&self) {
        self.cache.lock().clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    struct Flaky {
        calls: AtomicU32,
        fail_first: u32,
        error: ProviderError,
    }

    impl LlmProvider for Flaky {
        fn id(&self) -> &str {
            "flaky"
        }
        fn invoke(&self, _request: &LlmRequest) -> Result<String, ProviderError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
            if n <= self.fail_first {
                Err(self.error.clone())
            } else {
                Ok(format!("answer {n}"))
            }
        }
    }

    fn fast() -> GatewayConfig {
        GatewayConfig {
            base_backoff: Duration::from_millis(1),
            ..GatewayConfig::default()
        }
    }

    fn req() -> LlmRequest {
        LlmRequest::new(Purpose::Route, vec![ChatMessage::user("hi")])
    }

    #[test]
    fn request_invariants() {
        let mut r = req();
        r.temperature = 1.5;
        assert!(matches!(r.validate(), Err(LlmError::InvalidRequest(_))));
        let r = LlmRequest::new(Purpose::Route, vec![]);
        assert!(matches!(r.validate(), Err(LlmError::InvalidRequest(_))));
        let r = LlmRequest::new(
            Purpose::Route,
            vec![ChatMessage {
                role: MessageRole::Assistant,
                content: "x".into(),
            }],
        );
        assert!(matches!(r.validate(), Err(LlmError::InvalidRequest(_))));
    }

    #[test]
    fn transient_failures_are_retried_within_cap() {
        let provider = Arc::new(Flaky {
            calls: AtomicU32::new(0),
            fail_first: 3,
            error: ProviderError::Transient("503".into()),
        });
        let gw = LlmGateway::new(provider.clone(), fast());
        let resp = gw.complete(&req()).unwrap();
        assert_eq!(resp.content, "answer 4");
        assert_eq!(provider.calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn retries_exhausted() {
        let provider = Arc::new(Flaky {
            calls: AtomicU32::new(0),
            fail_first: 100,
            error: ProviderError::RateLimited("429".into()),
        });
        let gw = LlmGateway::new(provider.clone(), fast());
        assert_eq!(gw.complete(&req()), Err(LlmError::RateLimited { attempts: 4 }));
        assert_eq!(provider.calls.load(Ordering::SeqCst), 4);

        let provider = Arc::new(Flaky {
            calls: AtomicU32::new(0),
            fail_first: 100,
            error: ProviderError::Transient("reset".into()),
        });
        let gw = LlmGateway::new(provider.clone(), fast());
        assert!(matches!(
            gw.complete(&req()),
            Err(LlmError::ProviderUnavailable { attempts: 4, .. })
        ));
    }

    #[test]
    fn cache_hits_do_not_reach_provider_and_ignore_purpose() {
        let provider = Arc::new(Flaky {
            calls: AtomicU32::new(0),
            fail_first: 0,
            error: ProviderError::Transient(String::new()),
        });
        let gw = LlmGateway::new(provider.clone(), fast());
        let first = gw.complete(&req()).unwrap();
        assert!(!first.from_cache && first.latency_ms > 0);
        let mut other_purpose = req();
        other_purpose.purpose = Purpose::Summarize;
        let second = gw.complete(&other_purpose).unwrap();
        assert!(second.from_cache);
        assert_eq!(second.content, first.content);
        assert_eq!(provider.calls.load(Ordering::SeqCst), 1);

        let mut warmer = req();
        warmer.temperature = 0.7;
        assert!(!gw.complete(&warmer).unwrap().from_cache);
    }

    #[test]
    fn render_has_purpose_header() {
        let r = LlmRequest::new(
            Purpose::Codegen,
            vec![ChatMessage::system("sys"), ChatMessage::user("task")],
        );
        assert_eq!(r.render(), "[purpose:codegen]\n[system]\nsys\n[user]\ntask\n");
    }
}
