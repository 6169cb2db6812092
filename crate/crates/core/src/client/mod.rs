//! Clients for external model endpoints.
//!
//! A backend performs one request; [`Generator`] and [`EmbeddingClient`]
//! wrap a backend with bounded retries (exponential backoff) and a gate
//! limiting in-flight requests. Backends exist for chat-completions style
//! HTTP endpoints ([`http`]) and for deterministic offline mocks ([`mock`]).

pub mod http;
pub mod mock;
pub mod qa;

use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Failure of a single request.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum BackendError {
    #[error("transient: {0}")]
    Transient(String),
    #[error("timed out: {0}")]
    Timeout(String),
    #[error("{0}")]
    Fatal(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        !matches!(self, BackendError::Fatal(_))
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ClientError {
    #[error("request timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("retries exhausted after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("endpoint error: {0}")]
    Protocol(String),
    #[error("endpoint returned an empty completion")]
    EmptyCompletion,
    #[error("credential variable {0} is not set")]
    MissingCredential(String),
    #[error("invalid endpoint config: {0}")]
    InvalidConfig(String),
    #[error("empty input")]
    EmptyInput,
    #[error("embedding batch is inconsistent: {0}")]
    InconsistentEmbeddings(String),
}

fn default_timeout_ms() -> u64 {
    60_000
}
fn default_max_retries() -> u32 {
    3
}
fn default_max_concurrency() -> usize {
    4
}
fn default_initial_backoff_ms() -> u64 {
    500
}
fn default_max_backoff_ms() -> u64 {
    30_000
}

/// One model endpoint. The credential is read from the environment
/// variable named by `api_key_env`, never stored in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_max_concurrency")]
    pub max_concurrency: usize,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_initial_backoff_ms")]
    pub initial_backoff_ms: u64,
    #[serde(default = "default_max_backoff_ms")]
    pub max_backoff_ms: u64,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        EndpointConfig {
            base_url: base_url.into(),
            model_name: model_name.into(),
            api_key_env: None,
            timeout_ms: default_timeout_ms(),
            max_retries: default_max_retries(),
            max_concurrency: default_max_concurrency(),
            temperature: 0.0,
            initial_backoff_ms: default_initial_backoff_ms(),
            max_backoff_ms: default_max_backoff_ms(),
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if self.max_concurrency < 1 {
            return Err(ClientError::InvalidConfig("max_concurrency must be >= 1".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(ClientError::InvalidConfig("temperature must be >= 0".into()));
        }
        if self.timeout_ms == 0 {
            return Err(ClientError::InvalidConfig("timeout_ms must be > 0".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            initial_backoff: Duration::from_millis(self.initial_backoff_ms),
            max_backoff: Duration::from_millis(self.max_backoff_ms),
        }
    }

    /// Reads the credential, if one is configured.
    pub fn resolve_api_key(&self) -> Result<Option<String>, ClientError> {
        match &self.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| ClientError::MissingCredential(var.clone())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
}

impl RetryPolicy {
    pub fn immediate(max_retries: u32) -> Self {
        RetryPolicy {
            max_retries,
            initial_backoff: Duration::ZERO,
            max_backoff: Duration::ZERO,
        }
    }

    /// Delay before retry number `retry` (1-based).
    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry.saturating_sub(1)).unwrap_or(u32::MAX);
        self.initial_backoff.saturating_mul(factor).min(self.max_backoff)
    }

    /// Runs `op` until it succeeds, fails fatally, or `max_retries + 1`
    /// attempts have been made. Returns the value and the attempt count.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, BackendError>) -> Result<(T, u32), ClientError> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            match op() {
                Ok(v) => return Ok((v, attempts)),
                Err(BackendError::Fatal(msg)) => return Err(ClientError::Protocol(msg)),
                Err(err) if attempts > self.max_retries => {
                    return Err(match err {
                        BackendError::Timeout(_) => ClientError::Timeout { attempts },
                        other => ClientError::RetriesExhausted {
                            attempts,
                            last: other.to_string(),
                        },
                    });
                }
                Err(err) => {
                    let delay = self.backoff(attempts);
                    log::debug!("attempt {attempts} failed ({err}); retrying in {delay:?}");
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                }
            }
        }
    }
}

/// Counting semaphore bounding requests in flight.
#[derive(Debug)]
pub struct ConcurrencyGate {
    limit: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    gate: &'a ConcurrencyGate,
}

impl ConcurrencyGate {
    pub fn new(limit: usize) -> Self {
        ConcurrencyGate {
            limit: limit.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub fn limit(&self) -> usize {
        self.limit
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.limit {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        Permit { gate: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.gate.in_flight.lock().unwrap() -= 1;
        self.gate.freed.notify_one();
    }
}

/// Produces text for a prompt, one request per call.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, BackendError>;
}

/// Embeds a batch of texts, one request per call.
pub trait EmbeddingBackend: Send + Sync {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError>;
}

/// Anything that turns texts into vectors of one dimension, in order.
pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ClientError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResult {
    pub prompt: String,
    pub output_text: String,
    pub latency: Duration,
    pub attempts: u32,
}

/// Answer-generation client.
pub struct Generator {
    backend: Box<dyn CompletionBackend>,
    policy: RetryPolicy,
    gate: ConcurrencyGate,
}

impl Generator {
    pub fn new(backend: Box<dyn CompletionBackend>, policy: RetryPolicy, max_concurrency: usize) -> Self {
        Generator {
            backend,
            policy,
            gate: ConcurrencyGate::new(max_concurrency),
        }
    }

    /// HTTP client for `config`; fails if the credential is missing.
    pub fn http(config: &EndpointConfig) -> Result<Self, ClientError> {
        config.validate()?;
        let backend = http::HttpBackend::new(config)?;
        Ok(Self::new(
            Box::new(backend),
            config.retry_policy(),
            config.max_concurrency,
        ))
    }

    pub fn max_concurrency(&self) -> usize {
        self.gate.limit()
    }

    pub fn generate_answer(&self, prompt: &str) -> Result<GenerationResult, ClientError> {
        if prompt.is_empty() {
            return Err(ClientError::EmptyInput);
        }
        let started = Instant::now();
        let (output_text, attempts) = self.policy.run(|| {
            let _permit = self.gate.acquire();
            self.backend.complete(prompt)
        })?;
        if output_text.trim().is_empty() {
            return Err(ClientError::EmptyCompletion);
        }
        Ok(GenerationResult {
            prompt: prompt.to_owned(),
            output_text,
            latency: started.elapsed(),
            attempts,
        })
    }
}

/// Embedding client with shape checks.
pub struct EmbeddingClient {
    backend: Box<dyn EmbeddingBackend>,
    policy: RetryPolicy,
    gate: ConcurrencyGate,
}

impl EmbeddingClient {
    pub fn new(backend: Box<dyn EmbeddingBackend>, policy: RetryPolicy, max_concurrency: usize) -> Self {
        EmbeddingClient {
            backend,
            policy,
            gate: ConcurrencyGate::new(max_concurrency),
        }
    }

    pub fn http(config: &EndpointConfig) -> Result<Self, ClientError> {
        config.validate()?;
        let backend = http::HttpBackend::new(config)?;
        Ok(Self::new(
            Box::new(backend),
            config.retry_policy(),
            config.max_concurrency,
        ))
    }

    pub fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ClientError> {
        if texts.is_empty() {
            return Err(ClientError::EmptyInput);
        }
        let (vectors, _) = self.policy.run(|| {
            let _permit = self.gate.acquire();
            self.backend.embed_batch(texts)
        })?;
        check_embeddings(texts.len(), &vectors)?;
        Ok(vectors)
    }
}

impl Embedder for EmbeddingClient {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ClientError> {
        self.embed_texts(texts)
    }
}

fn check_embeddings(expected: usize, vectors: &[Vec<f64>]) -> Result<(), ClientError> {
    if vectors.len() != expected {
        return Err(ClientError::InconsistentEmbeddings(format!(
            "{} vectors for {expected} texts",
            vectors.len()
        )));
    }
    let dim = vectors.first().map_or(0, Vec::len);
    if dim == 0 {
        return Err(ClientError::InconsistentEmbeddings("zero-length vector".into()));
    }
    if let Some(bad) = vectors.iter().position(|v| v.len() != dim) {
        return Err(ClientError::InconsistentEmbeddings(format!(
            "vector {bad} has dimension {}, expected {dim}",
            vectors[bad].len()
        )));
    }
    if vectors.iter().flatten().any(|x| !x.is_finite()) {
        return Err(ClientError::InconsistentEmbeddings("non-finite component".into()));
    }
    Ok(())
}
