//! Deterministic offline backends. All are thread-safe.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{BackendError, ClientError, CompletionBackend, Embedder, EmbeddingBackend};
use crate::corpus::split_sentences;
use crate::prompt::split_prompt;
use crate::retrieval::tokenize;

impl<T: CompletionBackend + ?Sized> CompletionBackend for Arc<T> {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        (**self).complete(prompt)
    }
}

impl<T: EmbeddingBackend + ?Sized> EmbeddingBackend for Arc<T> {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        (**self).embed_batch(texts)
    }
}

/// Returns the prompt unchanged.
#[derive(Debug, Default, Clone, Copy)]
pub struct EchoBackend;

impl CompletionBackend for EchoBackend {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        Ok(prompt.to_owned())
    }
}

/// Always returns the same text.
#[derive(Debug, Clone)]
pub struct FixedBackend {
    output: String,
}

impl FixedBackend {
    pub fn new(output: impl Into<String>) -> Self {
        FixedBackend { output: output.into() }
    }
}

impl CompletionBackend for FixedBackend {
    fn complete(&self, _prompt: &str) -> Result<String, BackendError> {
        Ok(self.output.clone())
    }
}

/// Plays back queued outcomes, then answers `fallback` forever.
pub struct ScriptedBackend {
    script: Mutex<VecDeque<Result<String, BackendError>>>,
    fallback: String,
    calls: AtomicUsize,
}

impl ScriptedBackend {
    pub fn new(script: Vec<Result<String, BackendError>>, fallback: impl Into<String>) -> Self {
        ScriptedBackend {
            script: Mutex::new(script.into()),
            fallback: fallback.into(),
            calls: AtomicUsize::new(0),
        }
    }

    /// `failures` transient errors, then `output`.
    pub fn failing_then(output: impl Into<String>, failures: usize) -> Self {
        let script = (0..failures)
            .map(|i| Err(BackendError::Transient(format!("scripted failure {}", i + 1))))
            .collect();
        Self::new(script, output)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl CompletionBackend for ScriptedBackend {
    fn complete(&self, _prompt: &str) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.script
            .lock()
            .unwrap()
            .pop_front()
            .unwrap_or_else(|| Ok(self.fallback.clone()))
    }
}

/// Fails every request with the same error.
pub struct AlwaysFail {
    error: BackendError,
    calls: AtomicUsize,
}

impl AlwaysFail {
    pub fn new(error: BackendError) -> Self {
        AlwaysFail {
            error,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn transient() -> Self {
        Self::new(BackendError::Transient("service unavailable".into()))
    }

    pub fn timeout() -> Self {
        Self::new(BackendError::Timeout("deadline exceeded".into()))
    }

    pub fn fatal() -> Self {
        Self::new(BackendError::Fatal("bad request".into()))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl CompletionBackend for AlwaysFail {
    fn complete(&self, _prompt: &str) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Err(self.error.clone())
    }
}

impl EmbeddingBackend for AlwaysFail {
    fn embed_batch(&self, _texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        Err(self.error.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExtractScope {
    /// The whole context block.
    #[default]
    Context,
    /// Only the first sentence of the context block.
    FirstSentence,
}

/// Answers with every distinct regex match found in the prompt's context,
/// joined by `", "`, or `"unknown"` when nothing matches.
#[derive(Debug, Clone)]
pub struct ExtractiveBackend {
    pattern: Regex,
    scope: ExtractScope,
}

pub const NO_ANSWER: &str = "unknown";

impl ExtractiveBackend {
    pub fn new(pattern: &str, scope: ExtractScope) -> Result<Self, regex::Error> {
        Ok(ExtractiveBackend {
            pattern: Regex::new(pattern)?,
            scope,
        })
    }

    pub fn extract(&self, prompt: &str) -> String {
        let Some(context) = split_prompt(prompt).0 else {
            return NO_ANSWER.to_owned();
        };
        let region = match self.scope {
            ExtractScope::Context => context,
            ExtractScope::FirstSentence => split_sentences(context).first().copied().unwrap_or(""),
        };
        let mut found: Vec<&str> = Vec::new();
        for m in self.pattern.find_iter(region) {
            if !found.contains(&m.as_str()) {
                found.push(m.as_str());
            }
        }
        if found.is_empty() {
            NO_ANSWER.to_owned()
        } else {
            found.join(", ")
        }
    }
}

impl CompletionBackend for ExtractiveBackend {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        Ok(self.extract(prompt))
    }
}

/// Feature-hashing bag-of-words embedder: each token adds ±1 to one of
/// `dim` buckets (FNV-1a), and the result is L2-normalized.
#[derive(Debug, Clone, Copy)]
pub struct HashingEmbedder {
    dim: usize,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        HashingEmbedder { dim: dim.max(1) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for token in tokenize(text) {
            let h = fnv1a(token.as_bytes());
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % self.dim as u64) as usize] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl EmbeddingBackend for HashingEmbedder {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

impl Embedder for HashingEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ClientError> {
        if texts.is_empty() {
            return Err(ClientError::EmptyInput);
        }
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}
