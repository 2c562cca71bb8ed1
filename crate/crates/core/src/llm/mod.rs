//! Chat-completion and embedding providers.
//!
//! Every prompt in the crate goes out through [`LlmClient::chat`]; it stamps the
//! model settings onto a [`ChatRequest`] and enforces the concurrency bound.

mod embed;
mod remote;
mod stub;

use std::fmt;
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use embed::{Embedder, HashEmbedder, RemoteEmbedder, DEFAULT_EMBED_DIM};
pub use remote::{backoff_delay, chat_body_json, OpenAiCompatible};
pub use stub::{CapturedCall, ScriptEntry, ScriptedStub};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlmError {
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("transport failure: {0}")]
    TransportFailure(String),
    #[error("malformed provider response: {0}")]
    MalformedProviderResponse(String),
    #[error("stub transcript has no entry for request `{request_id}`")]
    StubExhausted { request_id: String },
    #[error("embedding dimension drifted: expected {expected}, got {got}")]
    DimensionDrift { expected: usize, got: usize },
    #[error("empty text")]
    EmptyText,
    #[error("environment variable `{0}` holding the api key is not set")]
    MissingApiKey(String),
    #[error("invalid llm config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub request_id: String,
    pub model_name: String,
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub content: String,
    pub token_usage: TokenUsage,
    pub provider_latency: Duration,
    /// Number of provider attempts this response took (1 = no retry).
    pub attempts: u32,
}

pub trait ChatProvider: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    Remote,
    #[default]
    ScriptedStub,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryConfig {
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
}

impl Default for RetryConfig {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            base_backoff_ms: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub provider: ProviderKind,
    pub endpoint: String,
    /// Name of the environment variable holding the api key, never the key itself.
    pub api_key_env: String,
    pub model_name: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub retry: RetryConfig,
    pub concurrency_bound: usize,
    pub timeout_secs: u64,
    pub stub_transcript: Option<PathBuf>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            provider: ProviderKind::ScriptedStub,
            endpoint: "https://api.openai.com/v1".into(),
            api_key_env: "FLARE_API_KEY".into(),
            model_name: "gpt-4o".into(),
            temperature: 0.0,
            max_tokens: 1024,
            retry: RetryConfig::default(),
            concurrency_bound: 4,
            timeout_secs: 120,
            stub_transcript: None,
        }
    }
}

impl LlmConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.retry.max_attempts < 1 {
            return Err(LlmError::InvalidConfig(
                "retry.max_attempts must be >= 1".into(),
            ));
        }
        if self.concurrency_bound < 1 {
            return Err(LlmError::InvalidConfig(
                "concurrency_bound must be >= 1".into(),
            ));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(LlmError::InvalidConfig("temperature must be >= 0".into()));
        }
        Ok(())
    }
}

/// Counting semaphore bounding in-flight provider calls.
#[derive(Debug)]
pub struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits.max(1)),
            cv: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut p = self.permits.lock().unwrap();
        while *p == 0 {
            p = self.cv.wait(p).unwrap();
        }
        *p -= 1;
        Permit(self)
    }
}

pub struct Permit<'a>(&'a Semaphore);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Clone)]
pub struct LlmClient {
    provider: Arc<dyn ChatProvider>,
    model_name: String,
    temperature: f64,
    max_tokens: u32,
    concurrency_bound: usize,
    gate: Arc<Semaphore>,
}

impl fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LlmClient")
            .field("model_name", &self.model_name)
            .field("temperature", &self.temperature)
            .field("concurrency_bound", &self.concurrency_bound)
            .finish()
    }
}

impl LlmClient {
    pub fn new(provider: Arc<dyn ChatProvider>, config: &LlmConfig) -> Self {
        Self {
            provider,
            model_name: config.model_name.clone(),
            temperature: config.temperature,
            max_tokens: config.max_tokens,
            concurrency_bound: config.concurrency_bound.max(1),
            gate: Arc::new(Semaphore::new(config.concurrency_bound)),
        }
    }

    /// Stub-backed client with default settings.
    pub fn from_stub(stub: Arc<ScriptedStub>) -> Self {
        Self::new(stub, &LlmConfig::default())
    }

    /// Builds the configured provider. Scripted stubs load their transcript here.
    pub fn from_config(config: &LlmConfig) -> Result<(Self, Option<Arc<ScriptedStub>>), LlmError> {
        config.validate()?;
        match config.provider {
            ProviderKind::ScriptedStub => {
                let path = config.stub_transcript.as_ref().ok_or_else(|| {
                    LlmError::InvalidConfig("scripted-stub provider needs a transcript".into())
                })?;
                let stub = Arc::new(ScriptedStub::from_path(path)?);
                Ok((Self::new(stub.clone(), config), Some(stub)))
            }
            ProviderKind::Remote => {
                let remote = OpenAiCompatible::from_config(config)?;
                Ok((Self::new(Arc::new(remote), config), None))
            }
        }
    }

    pub fn concurrency_bound(&self) -> usize {
        self.concurrency_bound
    }

    pub fn request(&self, request_id: impl Into<String>, system: &str, user: &str) -> ChatRequest {
        ChatRequest {
            request_id: request_id.into(),
            model_name: self.model_name.clone(),
            system_text: system.to_string(),
            user_text: user.to_string(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
        }
    }

    pub fn chat(
        &self,
        request_id: impl Into<String>,
        system: &str,
        user: &str,
    ) -> Result<ChatResponse, LlmError> {
        if system.trim().is_empty() || user.trim().is_empty() {
            return Err(LlmError::EmptyText);
        }
        let req = self.request(request_id, system, user);
        let _permit = self.gate.acquire();
        self.provider.complete(&req)
    }
}

/// Runs `f` over `items` with at most `bound` worker threads, returning results
/// in input order.
pub fn fan_out<T, R, F>(items: &[T], bound: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    use std::sync::atomic::{AtomicUsize, Ordering};
    if bound <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<R>>> = items.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..bound.min(items.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                *slots[i].lock().unwrap() = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("every slot filled"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn fan_out_preserves_order_and_bound() {
        let live = AtomicUsize::new(0);
        let peak = AtomicUsize::new(0);
        let items: Vec<usize> = (0..40).collect();
        let out = fan_out(&items, 3, |&i| {
            let now = live.fetch_add(1, Ordering::SeqCst) + 1;
            peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(1));
            live.fetch_sub(1, Ordering::SeqCst);
            i * 2
        });
        assert_eq!(out, items.iter().map(|i| i * 2).collect::<Vec<_>>());
        assert!(peak.load(Ordering::SeqCst) <= 3);
    }

    #[test]
    fn config_validation() {
        let mut c = LlmConfig::default();
        assert!(c.validate().is_ok());
        c.retry.max_attempts = 0;
        assert!(c.validate().is_err());
        let c = LlmConfig {
            concurrency_bound: 0,
            ..LlmConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn empty_prompt_rejected() {
        let stub = Arc::new(ScriptedStub::new(vec![ScriptEntry::always("", "YES")]));
        let client = LlmClient::from_stub(stub);
        assert_eq!(client.chat("x", "sys", "  "), Err(LlmError::EmptyText));
    }
}
