//! Chat-completions compatible HTTP backend.
//!
//! Completion: `POST {base_url}/chat/completions` with
//! `{"model", "messages": [{"role": "user", "content"}], "temperature"}`;
//! the text is `choices[0].message.content`.
//!
//! Embedding: `POST {base_url}/embeddings` with `{"model", "input": [...]}`;
//! vectors are read from `data[].embedding` ordered by `data[].index`.
//!
//! 408, 429 and 5xx responses, connection failures and timeouts are
//! retryable; other statuses and malformed bodies are not.

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use super::{BackendError, ClientError, CompletionBackend, EmbeddingBackend, EndpointConfig};

pub struct HttpBackend {
    http: Client,
    base_url: String,
    model: String,
    api_key: Option<String>,
    temperature: f64,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Serialize)]
struct EmbeddingRequest<'a> {
    model: &'a str,
    input: &'a [String],
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingItem>,
}

#[derive(Deserialize)]
struct EmbeddingItem {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

impl HttpBackend {
    pub fn new(config: &EndpointConfig) -> Result<Self, ClientError> {
        let api_key = config.resolve_api_key()?;
        let http = Client::builder()
            .timeout(config.timeout())
            .build()
            .map_err(|e| ClientError::InvalidConfig(e.to_string()))?;
        Ok(HttpBackend {
            http,
            base_url: config.base_url.trim_end_matches('/').to_owned(),
            model: config.model_name.clone(),
            api_key,
            temperature: config.temperature,
        })
    }

    fn post<B: Serialize, R: for<'de> Deserialize<'de>>(&self, route: &str, body: &B) -> Result<R, BackendError> {
        let mut req = self.http.post(format!("{}/{route}", self.base_url)).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(classify)?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            let msg = format!("HTTP {status}: {}", truncate(&body, 200));
            return Err(if is_retryable_status(status) {
                BackendError::Transient(msg)
            } else {
                BackendError::Fatal(msg)
            });
        }
        resp.json::<R>()
            .map_err(|e| BackendError::Fatal(format!("malformed response body: {e}")))
    }
}

fn is_retryable_status(status: StatusCode) -> bool {
    status == StatusCode::REQUEST_TIMEOUT || status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error()
}

fn classify(err: reqwest::Error) -> BackendError {
    if err.is_timeout() {
        BackendError::Timeout(err.to_string())
    } else if err.is_connect() || err.is_request() {
        BackendError::Transient(err.to_string())
    } else {
        BackendError::Fatal(err.to_string())
    }
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

impl CompletionBackend for HttpBackend {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let body = ChatRequest {
            model: &self.model,
            messages: [ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: self.temperature,
        };
        let resp: ChatResponse = self.post("chat/completions", &body)?;
        let choice = resp
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Fatal("response has no choices".into()))?;
        Ok(choice.message.content.unwrap_or_default())
    }
}

impl EmbeddingBackend for HttpBackend {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendError> {
        let body = EmbeddingRequest {
            model: &self.model,
            input: texts,
        };
        let resp: EmbeddingResponse = self.post("embeddings", &body)?;
        let mut items: Vec<(usize, Vec<f64>)> = resp
            .data
            .into_iter()
            .enumerate()
            .map(|(pos, item)| (item.index.unwrap_or(pos), item.embedding))
            .collect();
        items.sort_by_key(|(i, _)| *i);
        Ok(items.into_iter().map(|(_, v)| v).collect())
    }
}
