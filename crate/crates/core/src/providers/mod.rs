//! Embedding sources and rerankers behind a common contract.
//!
//! - [`MockProvider`]: seeded, hash-derived unit vectors for offline runs.
//! - [`StoreProvider`]: vectors precomputed into `.lvre` store files.
//! - [`HttpEmbeddingProvider`] / [`HttpReranker`]: JSON over HTTP to model
//!   servers.

mod http;
mod mock;
mod store;

use thiserror::Error;

use crate::embedding::{EmbeddingError, EmbeddingVector};

pub use http::{HttpEmbeddingProvider, HttpError, HttpReranker, HttpSettings};
pub use mock::{fnv1a64, MockProvider, XorShift64Star};
pub use store::{load_store, save_store, EmbeddingStore, StoreError, StoreProvider, STORE_MAGIC, STORE_VERSION};

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("unknown id {0}")]
    UnknownId(String),
    #[error("cardinality mismatch: sent {sent} inputs, received {received} vectors")]
    CardinalityMismatch { sent: usize, received: usize },
    #[error("dimension mismatch: expected {expected}, received {received}")]
    DimensionMismatch { expected: usize, received: usize },
    #[error("{0} not supported by this provider")]
    Unsupported(&'static str),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Http(#[from] HttpError),
}

/// A source of embeddings for one modality.
///
/// Every returned vector has dimension [`dim`](EmbeddingProvider::dim), and
/// identical inputs give identical vectors within one provider instance.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError>;

    fn embed_clips(&self, clip_ids: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError>;
}
