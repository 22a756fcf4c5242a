//! Embedding vectors, cosine similarity and deterministic top-K selection.

use std::cmp::Ordering;
use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timeline::TimeInterval;

/// Clip id to interval lookup used for tie-breaking.
pub type IntervalMap = HashMap<String, TimeInterval>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EmbeddingError {
    #[error("empty embedding vector")]
    Empty,
    #[error("non-finite component at position {0}")]
    NonFinite(usize),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("zero-norm embedding")]
    ZeroNorm,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("unknown id {0}")]
    UnknownId(String),
    #[error("clip {clip_id}: {source}")]
    Item {
        clip_id: String,
        #[source]
        source: Box<EmbeddingError>,
    },
}

/// Fixed-dimension vector of finite components. Persisted at 32-bit
/// precision; held and compared in 64-bit.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        if values.is_empty() {
            return Err(EmbeddingError::Empty);
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(EmbeddingError::NonFinite(pos));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn from_f32(values: &[f32]) -> Result<Self, EmbeddingError> {
        Self::new(values.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

impl<'de> Deserialize<'de> for EmbeddingVector {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(deserializer)?;
        EmbeddingVector::new(values).map_err(serde::de::Error::custom)
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = EmbeddingError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub clip_id: String,
    pub score: f64,
}

impl ScoredItem {
    pub fn new(clip_id: impl Into<String>, score: f64) -> Self {
        Self {
            clip_id: clip_id.into(),
            score,
        }
    }
}

/// Cosine of the angle between `a` and `b`, clamped to [-1, 1].
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbeddingError> {
    if a.dim() != b.dim() {
        return Err(EmbeddingError::DimensionMismatch {
            left: a.dim(),
            right: b.dim(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.0.iter().zip(&b.0) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(EmbeddingError::ZeroNorm);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Standard ranking order: score descending, then earlier interval start,
/// then lexicographic clip id.
pub fn rank_order(a: (&str, f64, f64), b: (&str, f64, f64)) -> Ordering {
    let (a_id, a_score, a_start) = a;
    let (b_id, b_score, b_start) = b;
    b_score
        .total_cmp(&a_score)
        .then_with(|| a_start.total_cmp(&b_start))
        .then_with(|| a_id.cmp(b_id))
}

/// Sorts scored items by [`rank_order`]. Every id must be present in `intervals`.
pub fn sort_ranked(
    items: &mut [ScoredItem],
    intervals: &IntervalMap,
) -> Result<(), EmbeddingError> {
    let mut keyed = Vec::with_capacity(items.len());
    for item in items.iter() {
        let start = intervals
            .get(&item.clip_id)
            .ok_or_else(|| EmbeddingError::UnknownId(item.clip_id.clone()))?
            .start_s();
        keyed.push(start);
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&i, &j| {
        rank_order(
            (&items[i].clip_id, items[i].score, keyed[i]),
            (&items[j].clip_id, items[j].score, keyed[j]),
        )
    });
    let sorted: Vec<ScoredItem> = order.into_iter().map(|i| items[i].clone()).collect();
    items.clone_from_slice(&sorted);
    Ok(())
}

/// Similarity of every item to `query`, in input order.
pub fn score_all(
    items: &[(&str, &EmbeddingVector)],
    query: &EmbeddingVector,
) -> Result<Vec<ScoredItem>, EmbeddingError> {
    items
        .par_iter()
        .map(|(id, vector)| {
            cosine_similarity(vector, query)
                .map(|score| ScoredItem::new(*id, score))
                .map_err(|e| EmbeddingError::Item {
                    clip_id: (*id).to_string(),
                    source: Box::new(e),
                })
        })
        .collect()
}

/// The `k` items most similar to `query`, best first.
pub fn top_k(
    items: &[(&str, &EmbeddingVector)],
    query: &EmbeddingVector,
    k: usize,
    intervals: &IntervalMap,
) -> Result<Vec<ScoredItem>, EmbeddingError> {
    if k == 0 {
        return Err(EmbeddingError::InvalidK);
    }
    let mut scored = score_all(items, query)?;
    sort_ranked(&mut scored, intervals)?;
    scored.truncate(k);
    Ok(scored)
}
