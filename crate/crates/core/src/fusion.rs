//! Intersection alignment of the visual and aural streams, and the end-to-end
//! single-video retrieval pipeline.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aural::{
    self, AuralError, IdentityReranker, LexicalOptions, Reranker, DEFAULT_CANDIDATE_CAP,
};
use crate::embedding::{self, rank_order, EmbeddingError, EmbeddingVector, IntervalMap, ScoredItem};
use crate::timeline::{Clip, TimeInterval};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("unknown id {0}")]
    UnknownId(String),
    #[error("duplicate id {0} in stream list")]
    DuplicateId(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Visual,
    Aural,
    Fusion,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Visual => "visual",
            Stage::Aural => "aural",
            Stage::Fusion => "fusion",
        })
    }
}

/// A pipeline failure labelled with the stage that produced it.
#[derive(Debug, Error)]
#[error("{stage}: {source}")]
pub struct RetrieveError {
    pub stage: Stage,
    #[source]
    pub source: Box<dyn std::error::Error + Send + Sync>,
}

impl RetrieveError {
    pub fn new(stage: Stage, source: impl Into<Box<dyn std::error::Error + Send + Sync>>) -> Self {
        Self {
            stage,
            source: source.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionStatus {
    Ok,
    EmptyIntersection,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FusedEntry {
    pub clip_id: String,
    pub interval: TimeInterval,
    pub fused_score: f64,
    pub visual_score: f64,
    pub aural_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RetrievalResult {
    pub entries: Vec<FusedEntry>,
    pub status: FusionStatus,
}

fn index_unique(list: &[ScoredItem]) -> Result<HashMap<&str, f64>, FusionError> {
    let mut map = HashMap::with_capacity(list.len());
    for item in list {
        if map.insert(item.clip_id.as_str(), item.score).is_some() {
            return Err(FusionError::DuplicateId(item.clip_id.clone()));
        }
    }
    Ok(map)
}

/// Keeps clips present in both top-K lists and ranks them by the mean of the
/// two stream similarities.
pub fn fuse(
    visual_topk: &[ScoredItem],
    aural_topk: &[ScoredItem],
    intervals: &IntervalMap,
) -> Result<RetrievalResult, FusionError> {
    let aural = index_unique(aural_topk)?;
    index_unique(visual_topk)?;
    for item in visual_topk.iter().chain(aural_topk) {
        if !intervals.contains_key(&item.clip_id) {
            return Err(FusionError::UnknownId(item.clip_id.clone()));
        }
    }

    let mut entries: Vec<FusedEntry> = visual_topk
        .iter()
        .filter_map(|v| {
            let a = *aural.get(v.clip_id.as_str())?;
            Some(FusedEntry {
                clip_id: v.clip_id.clone(),
                interval: intervals[&v.clip_id],
                fused_score: (v.score + a) / 2.0,
                visual_score: v.score,
                aural_score: a,
            })
        })
        .collect();
    entries.sort_by(|x, y| {
        rank_order(
            (&x.clip_id, x.fused_score, x.interval.start_s()),
            (&y.clip_id, y.fused_score, y.interval.start_s()),
        )
    });
    let status = if entries.is_empty() {
        FusionStatus::EmptyIntersection
    } else {
        FusionStatus::Ok
    };
    Ok(RetrievalResult { entries, status })
}

/// Everything the pipeline needs about one segmented video.
#[derive(Debug, Clone)]
pub struct VideoAssets {
    pub video_id: String,
    pub clips: Vec<Clip>,
    pub clip_embeddings: HashMap<String, EmbeddingVector>,
    pub subtitle_embeddings: HashMap<String, EmbeddingVector>,
}

#[derive(Debug, Clone)]
pub struct QueryInput {
    pub text: String,
    pub visual_embedding: EmbeddingVector,
    pub text_embedding: EmbeddingVector,
}

#[derive(Debug, Clone)]
pub struct RetrievalConfig {
    pub k_visual: usize,
    pub k_semantic: usize,
    pub k_aural: usize,
    /// Maximum candidate list length handed to the reranker; semantic
    /// candidates are never cut.
    pub candidate_cap: Option<usize>,
    pub lexical: LexicalOptions,
    /// Use the identity ordering when the reranker fails in transport.
    pub rerank_fallback: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k_visual: 10,
            k_semantic: 30,
            k_aural: 10,
            candidate_cap: Some(DEFAULT_CANDIDATE_CAP),
            lexical: LexicalOptions::default(),
            rerank_fallback: true,
        }
    }
}

fn collect_vectors<'a>(
    clips: &'a [Clip],
    vectors: &'a HashMap<String, EmbeddingVector>,
) -> Result<Vec<(&'a str, &'a EmbeddingVector)>, EmbeddingError> {
    clips
        .iter()
        .map(|c| {
            vectors
                .get(&c.clip_id)
                .map(|v| (c.clip_id.as_str(), v))
                .ok_or_else(|| EmbeddingError::UnknownId(c.clip_id.clone()))
        })
        .collect()
}

fn visual_stream(
    video: &VideoAssets,
    query: &QueryInput,
    config: &RetrievalConfig,
    intervals: &IntervalMap,
) -> Result<Vec<ScoredItem>, EmbeddingError> {
    let items = collect_vectors(&video.clips, &video.clip_embeddings)?;
    embedding::top_k(&items, &query.visual_embedding, config.k_visual, intervals)
}

fn aural_stream(
    video: &VideoAssets,
    query: &QueryInput,
    config: &RetrievalConfig,
    reranker: &dyn Reranker,
    intervals: &IntervalMap,
) -> Result<Vec<ScoredItem>, AuralError> {
    if config.k_semantic == 0 {
        return Err(AuralError::InvalidK);
    }
    let items = collect_vectors(&video.clips, &video.subtitle_embeddings)?;
    // every subtitle is scored up front so lexical-only candidates keep a similarity
    let mut ranked = embedding::score_all(&items, &query.text_embedding)?;
    let all_scores: HashMap<String, f64> = ranked
        .iter()
        .map(|s| (s.clip_id.clone(), s.score))
        .collect();
    embedding::sort_ranked(&mut ranked, intervals)?;
    ranked.truncate(config.k_semantic);

    let lexical = aural::lexical_candidates(&video.clips, &query.text, &config.lexical);
    let texts: HashMap<String, String> = video
        .clips
        .iter()
        .map(|c| (c.clip_id.clone(), c.subtitle_text.clone()))
        .collect();
    let mut candidates = aural::extend_candidates(&ranked, &lexical, &all_scores, &texts, intervals)?;
    if let Some(cap) = config.candidate_cap {
        candidates.cap_lexical(cap);
    }

    match aural::rerank_candidates(&candidates, &query.text, reranker, config.k_aural) {
        Err(e) if config.rerank_fallback && e.fallback_allowed() => {
            tracing::warn!(error = %e, "reranker unavailable, keeping candidate order");
            aural::rerank_candidates(&candidates, &query.text, &IdentityReranker, config.k_aural)
        }
        other => other,
    }
}

/// Runs both streams for one query over one video and fuses them.
pub fn retrieve(
    video: &VideoAssets,
    query: &QueryInput,
    config: &RetrievalConfig,
    reranker: &dyn Reranker,
) -> Result<RetrievalResult, RetrieveError> {
    let intervals: IntervalMap = video
        .clips
        .iter()
        .map(|c| (c.clip_id.clone(), c.interval))
        .collect();
    let (visual, aural) = rayon::join(
        || visual_stream(video, query, config, &intervals),
        || aural_stream(video, query, config, reranker, &intervals),
    );
    let visual = visual.map_err(|e| RetrieveError::new(Stage::Visual, e))?;
    let aural = aural.map_err(|e| RetrieveError::new(Stage::Aural, e))?;
    fuse(&visual, &aural, &intervals).map_err(|e| RetrieveError::new(Stage::Fusion, e))
}

/// One ranked result in the predictions wire format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionEntry {
    pub clip_id: String,
    pub start: f64,
    pub end: f64,
    pub fused_score: f64,
    pub visual_score: f64,
    pub aural_score: f64,
}

/// Predictions for one query; stored one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub video_id: String,
    pub query_id: String,
    pub results: Vec<PredictionEntry>,
}

impl PredictionRecord {
    pub fn from_result(video_id: &str, query_id: &str, result: &RetrievalResult) -> Self {
        Self {
            video_id: video_id.to_string(),
            query_id: query_id.to_string(),
            results: result
                .entries
                .iter()
                .map(|e| PredictionEntry {
                    clip_id: e.clip_id.clone(),
                    start: e.interval.start_s(),
                    end: e.interval.end_s(),
                    fused_score: e.fused_score,
                    visual_score: e.visual_score,
                    aural_score: e.aural_score,
                })
                .collect(),
        }
    }

    /// Predicted intervals in rank order.
    pub fn intervals(&self) -> Result<Vec<TimeInterval>, crate::timeline::TimelineError> {
        self.results
            .iter()
            .map(|r| TimeInterval::new(r.start, r.end))
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum PredictionsError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Reads JSON-lines predictions, skipping blank lines.
pub fn read_predictions(reader: impl BufRead) -> Result<Vec<PredictionRecord>, PredictionsError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PredictionRecord =
            serde_json::from_str(&line).map_err(|e| PredictionsError::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        record.intervals().map_err(|e| PredictionsError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_predictions(
    mut writer: impl Write,
    records: &[PredictionRecord],
) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Ids shared by both lists, for invariant checks.
pub fn shared_ids(a: &[ScoredItem], b: &[ScoredItem]) -> HashSet<String> {
    let left: HashSet<&str> = a.iter().map(|s| s.clip_id.as_str()).collect();
    b.iter()
        .filter(|s| left.contains(s.clip_id.as_str()))
        .map(|s| s.clip_id.clone())
        .collect()
}
