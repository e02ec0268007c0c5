//! Chat-completion gateway: request validation, a content-addressed response
//! cache, bounded concurrency and retry with exponential backoff over a
//! pluggable [`ChatBackend`].

mod cache;
mod mock;
mod remote;

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;
use tracing::{debug, warn};

pub use cache::{CacheEntry, ResponseCache};
pub use mock::{mock_complete, MockBackend, MOCK_TASK_POOL};
pub use remote::RemoteBackend;

pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    /// Distinguishes independent samples of the same prompt. Part of the cache
    /// key, never sent on the wire.
    #[serde(default)]
    pub sample_index: u32,
    /// Re-request counter after an unusable response. Cache-keyed like `sample_index`.
    #[serde(default)]
    pub attempt: u32,
}

impl ChatRequest {
    /// A single user-role message with no system prompt.
    pub fn user(model: &str, content: impl Into<String>, temperature: f64, max_tokens: u32) -> Self {
        Self {
            model: model.to_string(),
            messages: vec![Message { role: Role::User, content: content.into() }],
            temperature,
            max_tokens,
            sample_index: 0,
            attempt: 0,
        }
    }

    pub fn with_sample(mut self, sample_index: u32, attempt: u32) -> Self {
        self.sample_index = sample_index;
        self.attempt = attempt;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.model.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("empty model name".into()));
        }
        if !self.messages.iter().any(|m| m.role == Role::User) {
            return Err(GatewayError::InvalidRequest("no user message".into()));
        }
        if self.messages.iter().any(|m| m.content.trim().is_empty()) {
            return Err(GatewayError::InvalidRequest("empty message content".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::InvalidRequest("temperature must be >= 0".into()));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Concatenated user content, the text a prompt-shaped backend looks at.
    pub fn user_text(&self) -> String {
        self.messages
            .iter()
            .filter(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    Mock,
}

impl std::str::FromStr for BackendKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "remote" => Ok(BackendKind::Remote),
            "mock" => Ok(BackendKind::Mock),
            other => Err(format!("unknown backend {other:?} (expected remote or mock)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub finish_reason: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub backend: BackendKind,
    pub cached: bool,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatewayError {
    #[error("credential environment variable {0} is not set")]
    AuthMissing(String),
    #[error("rate limited, gave up after {0} attempts")]
    RateLimitedExhausted(u32),
    #[error("transport error: {0}")]
    TransportError(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("prompt matches neither the generation nor the scoring shape")]
    UnrecognizedPromptShape,
    #[error("cache error: {0}")]
    Cache(String),
}

/// Outcome of a single backend attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendError {
    /// HTTP 429.
    RateLimited,
    /// 5xx, timeout or connection failure; worth retrying.
    Transient(String),
    /// Anything retrying cannot fix.
    Fatal(GatewayError),
}

#[async_trait]
pub trait ChatBackend: Send + Sync {
    fn kind(&self) -> BackendKind;
    async fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub backend: BackendKind,
    pub base_url: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub api_key_env: String,
    pub max_retries: u32,
    pub backoff_initial_ms: u64,
    pub backoff_max_ms: u64,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
    pub cache_dir: Option<PathBuf>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            backend: BackendKind::Mock,
            base_url: DEFAULT_BASE_URL.into(),
            model: DEFAULT_MODEL.into(),
            temperature: 1.0,
            max_tokens: 1024,
            api_key_env: DEFAULT_API_KEY_ENV.into(),
            max_retries: 5,
            backoff_initial_ms: 500,
            backoff_max_ms: 30_000,
            timeout_secs: 120,
            max_in_flight: 8,
            cache_dir: None,
        }
    }
}

impl GatewayConfig {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.max_in_flight == 0 {
            return Err(GatewayError::InvalidRequest("max_in_flight must be >= 1".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(GatewayError::InvalidRequest("temperature must be >= 0".into()));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Delay before retry number `retry` (0-based): initial * 2^retry, capped.
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry.min(63)).unwrap_or(u64::MAX);
        Duration::from_millis(self.backoff_initial_ms.saturating_mul(factor).min(self.backoff_max_ms))
    }

    pub fn request(&self, prompt: impl Into<String>) -> ChatRequest {
        ChatRequest::user(&self.model, prompt, self.temperature, self.max_tokens)
    }
}

#[derive(Debug, Default)]
struct Counters {
    backend_calls: AtomicU64,
    cache_hits: AtomicU64,
    retries: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GatewayStats {
    pub backend_calls: u64,
    pub cache_hits: u64,
    pub retries: u64,
}

/// Shared handle; clone freely across workers.
#[derive(Clone)]
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    config: Arc<GatewayConfig>,
    cache: Option<Arc<ResponseCache>>,
    permits: Arc<Semaphore>,
    counters: Arc<Counters>,
}

impl Gateway {
    pub fn new(config: GatewayConfig, backend: Arc<dyn ChatBackend>) -> Result<Self, GatewayError> {
        config.validate()?;
        let cache = match &config.cache_dir {
            Some(dir) => Some(Arc::new(ResponseCache::open(dir)?)),
            None => None,
        };
        Ok(Self {
            backend,
            permits: Arc::new(Semaphore::new(config.max_in_flight)),
            config: Arc::new(config),
            cache,
            counters: Arc::default(),
        })
    }

    /// Builds the backend named in `config`. The remote backend fails here if
    /// its credential is missing, before any request is attempted.
    pub fn from_config(config: GatewayConfig) -> Result<Self, GatewayError> {
        let backend: Arc<dyn ChatBackend> = match config.backend {
            BackendKind::Mock => Arc::new(MockBackend::new()),
            BackendKind::Remote => Arc::new(RemoteBackend::from_config(&config)?),
        };
        Self::new(config, backend)
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            backend_calls: self.counters.backend_calls.load(Ordering::Relaxed),
            cache_hits: self.counters.cache_hits.load(Ordering::Relaxed),
            retries: self.counters.retries.load(Ordering::Relaxed),
        }
    }

    pub async fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let kind = self.backend.kind();
        let key = ResponseCache::key(kind, request);
        if let Some(cache) = &self.cache {
            if let Some(mut hit) = cache.get(&key)? {
                self.counters.cache_hits.fetch_add(1, Ordering::Relaxed);
                hit.cached = true;
                return Ok(hit);
            }
        }
        let response = self.send_with_retry(request).await?;
        if let Some(cache) = &self.cache {
            cache.put(&key, request, &response)?;
        }
        Ok(response)
    }

    async fn send_with_retry(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let mut retry = 0;
        loop {
            let outcome = {
                let _permit = self.permits.acquire().await.expect("semaphore never closed");
                self.counters.backend_calls.fetch_add(1, Ordering::Relaxed);
                self.backend.send(request).await
            };
            let err = match outcome {
                Ok(mut resp) => {
                    resp.cached = false;
                    return Ok(resp);
                }
                Err(BackendError::Fatal(e)) => return Err(e),
                Err(e) => e,
            };
            if retry >= self.config.max_retries {
                return Err(match err {
                    BackendError::RateLimited => GatewayError::RateLimitedExhausted(retry + 1),
                    BackendError::Transient(msg) => GatewayError::TransportError(msg),
                    BackendError::Fatal(e) => e,
                });
            }
            let delay = self.config.backoff(retry);
            warn!(?err, retry, delay_ms = delay.as_millis() as u64, "retrying chat request");
            self.counters.retries.fetch_add(1, Ordering::Relaxed);
            tokio::time::sleep(delay).await;
            retry += 1;
            debug!(retry, "resending");
        }
    }
}
