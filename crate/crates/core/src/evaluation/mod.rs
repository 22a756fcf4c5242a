//! Long-video retrieval evaluation.
//!
//! A predicted interval matches a query's ground-truth interval when their
//! temporal overlap exceeds an intersection threshold. Recall@K is the share
//! of queries with a match among their first K predictions; Average
//! Recall@K is the mean of Recall@K over a threshold grid, 0.50 to 0.95 in
//! steps of 0.05 by default.

mod dataset;

use std::collections::HashMap;
use std::fmt;
use std::hash::Hash;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timeline::TimeInterval;

pub use dataset::{
    evaluate_dataset, evaluate_paths, parse_ground_truth, Averaging, AverageRow, EvalOptions,
    GroundTruthEntry, MetricReport, RecallRow,
};

/// Intersection thresholds 0.50, 0.55, ..., 0.95 written out as literals so
/// each value is the nearest double to its decimal.
pub const DEFAULT_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

pub const DEFAULT_KS: [usize; 3] = [1, 5, 10];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("threshold grid is empty")]
    EmptyGrid,
    #[error("threshold {0} outside (0, 1)")]
    ThresholdOutOfRange(f64),
    #[error("thresholds must be strictly increasing")]
    ThresholdsNotIncreasing,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("no queries to evaluate")]
    NoQueries,
    #[error("no predictions for ground-truth query {0}")]
    MissingPrediction(String),
    #[error(
        "join failed: {} ground-truth queries without predictions [{}], {} predictions without ground truth [{}]",
        missing_predictions.len(), missing_predictions.join(", "),
        unknown_queries.len(), unknown_queries.join(", ")
    )]
    Join {
        missing_predictions: Vec<String>,
        unknown_queries: Vec<String>,
    },
    #[error("duplicate {kind} for query {key}")]
    Duplicate { kind: &'static str, key: String },
    #[error("malformed {what}: {message}")]
    Malformed { what: &'static str, message: String },
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMode {
    /// Intersection over union.
    #[default]
    Iou,
    /// Intersection over ground-truth duration.
    GtCoverage,
}

impl FromStr for OverlapMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "iou" => Ok(Self::Iou),
            "gt_coverage" => Ok(Self::GtCoverage),
            other => Err(format!("unknown overlap mode `{other}` (expected iou or gt_coverage)")),
        }
    }
}

impl fmt::Display for OverlapMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Iou => "iou",
            Self::GtCoverage => "gt_coverage",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchComparison {
    /// overlap > threshold
    #[default]
    StrictGreater,
    /// overlap >= threshold
    GreaterOrEqual,
}

impl FromStr for MatchComparison {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "strict_greater" | "gt" => Ok(Self::StrictGreater),
            "greater_or_equal" | "ge" => Ok(Self::GreaterOrEqual),
            other => Err(format!(
                "unknown match comparison `{other}` (expected strict_greater or greater_or_equal)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchCriterion {
    pub mode: OverlapMode,
    pub comparison: MatchComparison,
}

impl MatchCriterion {
    pub fn matches(&self, pred: &TimeInterval, gt: &TimeInterval, threshold: f64) -> bool {
        let overlap = temporal_overlap(pred, gt, self.mode);
        match self.comparison {
            MatchComparison::StrictGreater => overlap > threshold,
            MatchComparison::GreaterOrEqual => overlap >= threshold,
        }
    }
}

/// Validated, strictly increasing thresholds in (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ThresholdGrid(Vec<f64>);

impl ThresholdGrid {
    pub fn new(values: Vec<f64>) -> Result<Self, EvalError> {
        if values.is_empty() {
            return Err(EvalError::EmptyGrid);
        }
        if let Some(&bad) = values.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(EvalError::ThresholdOutOfRange(bad));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EvalError::ThresholdsNotIncreasing);
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl Default for ThresholdGrid {
    fn default() -> Self {
        Self(DEFAULT_THRESHOLDS.to_vec())
    }
}

/// Query identity across predictions and ground truth.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QueryKey {
    pub video_id: String,
    pub query_id: String,
}

impl QueryKey {
    pub fn new(video_id: impl Into<String>, query_id: impl Into<String>) -> Self {
        Self {
            video_id: video_id.into(),
            query_id: query_id.into(),
        }
    }
}

impl fmt::Display for QueryKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.video_id, self.query_id)
    }
}

/// Normalized temporal overlap in [0, 1].
pub fn temporal_overlap(pred: &TimeInterval, gt: &TimeInterval, mode: OverlapMode) -> f64 {
    let inter = pred.intersection_len(gt);
    let denom = match mode {
        OverlapMode::Iou => pred.duration() + gt.duration() - inter,
        OverlapMode::GtCoverage => gt.duration(),
    };
    (inter / denom).clamp(0.0, 1.0)
}

/// True when the overlap strictly exceeds `threshold`.
pub fn is_match(pred: &TimeInterval, gt: &TimeInterval, threshold: f64, mode: OverlapMode) -> bool {
    temporal_overlap(pred, gt, mode) > threshold
}

/// 1-based rank of the first prediction matching at each threshold, searching
/// at most `max_rank` predictions.
pub(crate) fn first_match_ranks(
    predictions: &[TimeInterval],
    gt: &TimeInterval,
    thresholds: &[f64],
    criterion: MatchCriterion,
    max_rank: usize,
) -> Vec<Option<usize>> {
    let mut ranks = vec![None; thresholds.len()];
    for (pos, pred) in predictions.iter().take(max_rank).enumerate() {
        for (slot, &t) in ranks.iter_mut().zip(thresholds) {
            if slot.is_none() && criterion.matches(pred, gt, t) {
                *slot = Some(pos + 1);
            }
        }
        if ranks.iter().all(Option::is_some) {
            break;
        }
    }
    ranks
}

/// Recall@K at one threshold, micro-averaged over every ground-truth query.
pub fn recall_at_k<Q: Hash + Eq + fmt::Display>(
    predictions: &HashMap<Q, Vec<TimeInterval>>,
    ground_truth: &HashMap<Q, TimeInterval>,
    k: usize,
    threshold: f64,
    criterion: MatchCriterion,
) -> Result<f64, EvalError> {
    if k == 0 {
        return Err(EvalError::InvalidK);
    }
    if ground_truth.is_empty() {
        return Err(EvalError::NoQueries);
    }
    let mut hits = 0usize;
    for (query, gt) in ground_truth {
        let preds = predictions
            .get(query)
            .ok_or_else(|| EvalError::MissingPrediction(query.to_string()))?;
        if first_match_ranks(preds, gt, &[threshold], criterion, k)[0].is_some() {
            hits += 1;
        }
    }
    Ok(hits as f64 / ground_truth.len() as f64)
}

/// Mean of the per-threshold cells, summed in grid order.
pub fn mean_of_cells(cells: &[f64]) -> f64 {
    cells.iter().sum::<f64>() / cells.len() as f64
}

/// Recall@K averaged over `grid`.
pub fn average_recall_at_k<Q: Hash + Eq + fmt::Display>(
    predictions: &HashMap<Q, Vec<TimeInterval>>,
    ground_truth: &HashMap<Q, TimeInterval>,
    k: usize,
    criterion: MatchCriterion,
    grid: &[f64],
) -> Result<f64, EvalError> {
    if grid.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    let cells = grid
        .iter()
        .map(|&t| recall_at_k(predictions, ground_truth, k, t, criterion))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(mean_of_cells(&cells))
}
