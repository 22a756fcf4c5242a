//! Dataset-level evaluation: ground-truth ingestion, the (K x threshold)
//! recall table and its report formats.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    first_match_ranks, mean_of_cells, EvalError, MatchComparison, MatchCriterion, OverlapMode,
    QueryKey, ThresholdGrid, DEFAULT_KS,
};
use crate::fusion::{read_predictions, PredictionRecord};
use crate::timeline::TimeInterval;

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthEntry {
    pub video_id: String,
    pub query_id: String,
    pub query_text: String,
    pub interval: TimeInterval,
}

impl GroundTruthEntry {
    pub fn key(&self) -> QueryKey {
        QueryKey::new(&self.video_id, &self.query_id)
    }
}

#[derive(Deserialize)]
struct GroundTruthWire {
    videos: Vec<VideoWire>,
}

#[derive(Deserialize)]
struct VideoWire {
    video_id: String,
    annotations: Vec<AnnotationWire>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum QueryIdWire {
    Text(String),
    Number(serde_json::Number),
}

#[derive(Deserialize)]
struct AnnotationWire {
    query_id: QueryIdWire,
    sentence: String,
    segment: [f64; 2],
}

/// Parses the YouCook2-style ground-truth JSON. Numeric query ids are
/// accepted and normalized to their decimal string.
pub fn parse_ground_truth(raw: &[u8]) -> Result<Vec<GroundTruthEntry>, EvalError> {
    let malformed = |message: String| EvalError::Malformed {
        what: "ground truth",
        message,
    };
    let wire: GroundTruthWire = serde_json::from_slice(raw).map_err(|e| malformed(e.to_string()))?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for video in wire.videos {
        for ann in video.annotations {
            let query_id = match ann.query_id {
                QueryIdWire::Text(s) => s,
                QueryIdWire::Number(n) => n.to_string(),
            };
            let interval = TimeInterval::new(ann.segment[0], ann.segment[1])
                .map_err(|e| malformed(format!("{}/{}: {e}", video.video_id, query_id)))?;
            let entry = GroundTruthEntry {
                video_id: video.video_id.clone(),
                query_id,
                query_text: ann.sentence.trim().to_string(),
                interval,
            };
            if !seen.insert(entry.key()) {
                return Err(EvalError::Duplicate {
                    kind: "ground truth",
                    key: entry.key().to_string(),
                });
            }
            out.push(entry);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Every query weighs the same.
    #[default]
    Micro,
    /// Recall per video first, then the mean over videos.
    VideoMacro,
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    pub grid: ThresholdGrid,
    pub criterion: MatchCriterion,
    pub averaging: Averaging,
    /// Exclude unjoinable queries instead of failing.
    pub skip_unmatched: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            ks: DEFAULT_KS.to_vec(),
            grid: ThresholdGrid::default(),
            criterion: MatchCriterion::default(),
            averaging: Averaging::Micro,
            skip_unmatched: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallRow {
    pub k: usize,
    pub threshold: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageRow {
    pub k: usize,
    pub average_recall: f64,
}

/// Recall for every (K, threshold) cell plus Average Recall@K per K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub overlap_mode: OverlapMode,
    pub match_comparison: MatchComparison,
    pub averaging: Averaging,
    pub ks: Vec<usize>,
    pub thresholds: Vec<f64>,
    /// K-major: all thresholds for `ks[0]`, then `ks[1]`, ...
    pub recall: Vec<RecallRow>,
    pub average_recall: Vec<AverageRow>,
    pub queries_evaluated: usize,
    pub queries_skipped: usize,
}

impl MetricReport {
    /// Per-threshold cells for one K, in grid order.
    pub fn cells(&self, k: usize) -> Vec<f64> {
        self.recall
            .iter()
            .filter(|r| r.k == k)
            .map(|r| r.recall)
            .collect()
    }

    pub fn recall_at(&self, k: usize, threshold: f64) -> Option<f64> {
        self.recall
            .iter()
            .find(|r| r.k == k && r.threshold == threshold)
            .map(|r| r.recall)
    }

    pub fn average(&self, k: usize) -> Option<f64> {
        self.average_recall
            .iter()
            .find(|r| r.k == k)
            .map(|r| r.average_recall)
    }

    /// `k,threshold,recall` rows, one per table cell.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,threshold,recall\n");
        for row in &self.recall {
            let _ = writeln!(out, "{},{},{}", row.k, row.threshold, row.recall);
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialization is infallible");
        s.push('\n');
        s
    }

    /// Human-readable Average Recall@K summary.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for row in &self.average_recall {
            let _ = writeln!(out, "Avg R@{:<3} {:>7.2}%", row.k, row.average_recall * 100.0);
        }
        let _ = writeln!(
            out,
            "queries evaluated: {}, skipped: {}",
            self.queries_evaluated, self.queries_skipped
        );
        out
    }
}

/// Builds the full metric report for a predictions set against ground truth.
pub fn evaluate_dataset(
    predictions: &[PredictionRecord],
    ground_truth: &[GroundTruthEntry],
    options: &EvalOptions,
) -> Result<MetricReport, EvalError> {
    if options.ks.is_empty() || options.ks.contains(&0) {
        return Err(EvalError::InvalidK);
    }
    let grid = options.grid.values();

    let mut by_key: HashMap<QueryKey, &PredictionRecord> = HashMap::with_capacity(predictions.len());
    for record in predictions {
        let key = QueryKey::new(&record.video_id, &record.query_id);
        if by_key.insert(key.clone(), record).is_some() {
            return Err(EvalError::Duplicate {
                kind: "predictions",
                key: key.to_string(),
            });
        }
    }

    let gt_keys: BTreeSet<QueryKey> = ground_truth.iter().map(GroundTruthEntry::key).collect();
    let missing: Vec<String> = ground_truth
        .iter()
        .filter(|g| !by_key.contains_key(&g.key()))
        .map(|g| g.key().to_string())
        .collect();
    let mut unknown: Vec<String> = by_key
        .keys()
        .filter(|k| !gt_keys.contains(k))
        .map(ToString::to_string)
        .collect();
    unknown.sort();
    if !options.skip_unmatched && (!missing.is_empty() || !unknown.is_empty()) {
        return Err(EvalError::Join {
            missing_predictions: missing,
            unknown_queries: unknown,
        });
    }
    let skipped = missing.len() + unknown.len();

    let max_k = *options.ks.iter().max().expect("ks non-empty");
    // hit counts per video, [k_idx][t_idx]
    let mut per_video: BTreeMap<&str, (Vec<Vec<usize>>, usize)> = BTreeMap::new();
    for gt in ground_truth {
        let Some(record) = by_key.get(&gt.key()) else {
            continue;
        };
        let preds = record.intervals().map_err(|e| EvalError::Malformed {
            what: "predictions",
            message: format!("{}: {e}", gt.key()),
        })?;
        let ranks = first_match_ranks(&preds, &gt.interval, grid, options.criterion, max_k);
        let (counts, total) = per_video
            .entry(gt.video_id.as_str())
            .or_insert_with(|| (vec![vec![0; grid.len()]; options.ks.len()], 0));
        *total += 1;
        for (ki, &k) in options.ks.iter().enumerate() {
            for (ti, rank) in ranks.iter().enumerate() {
                if rank.is_some_and(|r| r <= k) {
                    counts[ki][ti] += 1;
                }
            }
        }
    }

    let evaluated: usize = per_video.values().map(|(_, n)| n).sum();
    if evaluated == 0 {
        return Err(EvalError::NoQueries);
    }

    let cell = |ki: usize, ti: usize| -> f64 {
        match options.averaging {
            Averaging::Micro => {
                let hits: usize = per_video.values().map(|(c, _)| c[ki][ti]).sum();
                hits as f64 / evaluated as f64
            }
            Averaging::VideoMacro => {
                let per: Vec<f64> = per_video
                    .values()
                    .map(|(c, n)| c[ki][ti] as f64 / *n as f64)
                    .collect();
                mean_of_cells(&per)
            }
        }
    };

    let mut recall = Vec::with_capacity(options.ks.len() * grid.len());
    let mut average_recall = Vec::with_capacity(options.ks.len());
    for (ki, &k) in options.ks.iter().enumerate() {
        let cells: Vec<f64> = (0..grid.len()).map(|ti| cell(ki, ti)).collect();
        average_recall.push(AverageRow {
            k,
            average_recall: mean_of_cells(&cells),
        });
        recall.extend(grid.iter().zip(cells).map(|(&threshold, recall)| RecallRow {
            k,
            threshold,
            recall,
        }));
    }

    Ok(MetricReport {
        overlap_mode: options.criterion.mode,
        match_comparison: options.criterion.comparison,
        averaging: options.averaging,
        ks: options.ks.clone(),
        thresholds: grid.to_vec(),
        recall,
        average_recall,
        queries_evaluated: evaluated,
        queries_skipped: skipped,
    })
}

/// File-level wrapper: JSON-lines predictions and ground-truth JSON.
pub fn evaluate_paths(
    predictions_path: &Path,
    ground_truth_path: &Path,
    options: &EvalOptions,
) -> Result<MetricReport, EvalError> {
    let io_err = |path: &Path, e: std::io::Error| EvalError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let file = std::fs::File::open(predictions_path).map_err(|e| io_err(predictions_path, e))?;
    let predictions = read_predictions(std::io::BufReader::new(file)).map_err(|e| EvalError::Malformed {
        what: "predictions",
        message: e.to_string(),
    })?;
    let raw = std::fs::read(ground_truth_path).map_err(|e| io_err(ground_truth_path, e))?;
    let ground_truth = parse_ground_truth(&raw)?;
    evaluate_dataset(&predictions, &ground_truth, options)
}
