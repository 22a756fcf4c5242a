//! Moment retrieval for long audible videos.
//!
//! Videos are segmented at subtitle boundaries ([`timeline`]). Each query runs
//! through a visual stream over clip embeddings and an aural stream over
//! subtitle embeddings with lexical candidate expansion and re-ranking
//! ([`aural`]). The two top-K lists are intersected on clip identity and
//! ranked by averaged similarity ([`fusion`]). [`evaluation`] scores
//! predictions with Recall@K averaged over temporal-overlap thresholds.
//! Encoders and rerankers are reached through [`providers`].

pub mod aural;
pub mod embedding;
pub mod evaluation;
pub mod fusion;
pub mod providers;
pub mod timeline;

pub use aural::{IdentityReranker, Reranker};
pub use embedding::{cosine_similarity, EmbeddingVector, ScoredItem};
pub use fusion::{fuse, retrieve, RetrievalConfig, RetrievalResult};
pub use timeline::{parse_transcript, segment_video, Clip, TimeInterval, Transcript};
