//! JSON-over-HTTP clients for embedding and rerank servers.
//!
//! Embedding protocol: `POST {"texts": [...]}` (or `{"clip_ids": [...]}` for
//! clip vectors) answered by `{"vectors": [[...], ...]}`.
//! Rerank protocol: `POST {"query": "...", "candidates": [{"id", "text"}]}`
//! answered by `{"ranking": ["<id>", ...]}`.

use std::time::Duration;

use reqwest::blocking::Client;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{EmbeddingProvider, ProviderError};
use crate::aural::{RerankCandidate, RerankError, Reranker};
use crate::embedding::EmbeddingVector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HttpError {
    #[error("request timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("server returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("client setup failed: {0}")]
    Setup(String),
}

impl HttpError {
    pub fn is_transient(&self) -> bool {
        match self {
            HttpError::Timeout | HttpError::Connect(_) => true,
            HttpError::Status { status, .. } => *status == 429 || *status >= 500,
            HttpError::Malformed(_) | HttpError::Setup(_) => false,
        }
    }
}

/// Transport policy shared by every HTTP client.
#[derive(Debug, Clone)]
pub struct HttpSettings {
    pub timeout: Duration,
    /// Extra attempts after the first on transient failures.
    pub retries: u32,
    /// Delay before the first retry; doubles on every further retry.
    pub backoff: Duration,
    pub bearer_token: Option<String>,
    pub batch_size: usize,
    pub max_in_flight: usize,
}

impl Default for HttpSettings {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(30),
            retries: 3,
            backoff: Duration::from_millis(200),
            bearer_token: None,
            batch_size: 64,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone)]
struct Transport {
    client: Client,
    settings: HttpSettings,
}

impl Transport {
    fn new(settings: HttpSettings) -> Result<Self, HttpError> {
        let client = Client::builder()
            .timeout(settings.timeout)
            .build()
            .map_err(|e| HttpError::Setup(e.to_string()))?;
        Ok(Self { client, settings })
    }

    fn post_once<Req: Serialize, Resp: DeserializeOwned>(&self, url: &str, body: &Req) -> Result<Resp, HttpError> {
        let mut request = self.client.post(url).json(body);
        if let Some(token) = &self.settings.bearer_token {
            request = request.bearer_auth(token);
        }
        let response = request.send().map_err(classify)?;
        let status = response.status();
        let text = response.text().map_err(classify)?;
        if !status.is_success() {
            return Err(HttpError::Status {
                status: status.as_u16(),
                body: text.chars().take(200).collect(),
            });
        }
        serde_json::from_str(&text).map_err(|e| HttpError::Malformed(e.to_string()))
    }

    fn post_json<Req: Serialize, Resp: DeserializeOwned>(&self, url: &str, body: &Req) -> Result<Resp, HttpError> {
        let mut attempt = 0u32;
        loop {
            match self.post_once(url, body) {
                Err(e) if e.is_transient() && attempt < self.settings.retries => {
                    let delay = self.settings.backoff.saturating_mul(1 << attempt.min(16));
                    tracing::debug!(error = %e, attempt, ?delay, "transient http failure, retrying");
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

fn classify(e: reqwest::Error) -> HttpError {
    if e.is_timeout() {
        HttpError::Timeout
    } else if e.is_decode() {
        HttpError::Malformed(e.to_string())
    } else {
        HttpError::Connect(e.to_string())
    }
}

#[derive(Serialize)]
#[serde(rename_all = "snake_case")]
enum EmbedRequest<'a> {
    Texts(&'a [String]),
    ClipIds(&'a [String]),
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Embedding provider backed by a model server.
#[derive(Debug, Clone)]
pub struct HttpEmbeddingProvider {
    url: String,
    dim: usize,
    transport: Transport,
}

impl HttpEmbeddingProvider {
    pub fn new(url: impl Into<String>, dim: usize, settings: HttpSettings) -> Result<Self, ProviderError> {
        let url = url.into();
        reqwest::Url::parse(&url).map_err(|e| HttpError::Setup(format!("invalid url {url}: {e}")))?;
        if dim == 0 {
            return Err(ProviderError::Unsupported("zero-dimension embeddings"));
        }
        Ok(Self {
            url,
            dim,
            transport: Transport::new(settings)?,
        })
    }

    fn embed_batch(&self, inputs: &[String], clips: bool) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let body = if clips {
            EmbedRequest::ClipIds(inputs)
        } else {
            EmbedRequest::Texts(inputs)
        };
        let response: EmbedResponse = self.transport.post_json(&self.url, &body)?;
        if response.vectors.len() != inputs.len() {
            return Err(ProviderError::CardinalityMismatch {
                sent: inputs.len(),
                received: response.vectors.len(),
            });
        }
        response
            .vectors
            .into_iter()
            .map(|values| {
                if values.len() != self.dim {
                    return Err(ProviderError::DimensionMismatch {
                        expected: self.dim,
                        received: values.len(),
                    });
                }
                Ok(EmbeddingVector::new(values)?)
            })
            .collect()
    }

    fn embed_all(&self, inputs: &[String], clips: bool) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let batch = self.transport.settings.batch_size.max(1);
        let in_flight = self.transport.settings.max_in_flight.max(1);
        let batches: Vec<&[String]> = inputs.chunks(batch).collect();
        let mut out = Vec::with_capacity(inputs.len());
        for wave in batches.chunks(in_flight) {
            let results: Vec<Result<Vec<EmbeddingVector>, ProviderError>> = std::thread::scope(|s| {
                let handles: Vec<_> = wave
                    .iter()
                    .map(|chunk| s.spawn(move || self.embed_batch(chunk, clips)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("embedding worker panicked"))
                    .collect()
            });
            for r in results {
                out.extend(r?);
            }
        }
        Ok(out)
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        self.embed_all(texts, false)
    }

    fn embed_clips(&self, clip_ids: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        self.embed_all(clip_ids, true)
    }
}

#[derive(Serialize)]
struct RerankRequest<'a> {
    query: &'a str,
    candidates: &'a [RerankCandidate],
}

#[derive(Deserialize)]
struct RerankResponse {
    ranking: Vec<String>,
}

/// Reranker backed by a rerank server (an LLM shim in practice).
#[derive(Debug, Clone)]
pub struct HttpReranker {
    url: String,
    transport: Transport,
}

impl HttpReranker {
    pub fn new(url: impl Into<String>, settings: HttpSettings) -> Result<Self, HttpError> {
        let url = url.into();
        reqwest::Url::parse(&url).map_err(|e| HttpError::Setup(format!("invalid url {url}: {e}")))?;
        Ok(Self {
            url,
            transport: Transport::new(settings)?,
        })
    }
}

impl Reranker for HttpReranker {
    fn rerank(&self, query: &str, candidates: &[RerankCandidate]) -> Result<Vec<String>, RerankError> {
        let body = RerankRequest { query, candidates };
        match self.transport.post_json::<_, RerankResponse>(&self.url, &body) {
            Ok(r) => Ok(r.ranking),
            // a rejected request will be rejected again; anything else may be the server's fault
            Err(e @ HttpError::Status { status, .. }) if (400..500).contains(&status) && status != 429 => {
                Err(RerankError::fatal(e.to_string()))
            }
            Err(e) => Err(RerankError::transport(e.to_string())),
        }
    }
}
