//! Batch command-line surface: `segment`, `retrieve`, `evaluate` and
//! `pipeline`.

pub mod config;
pub mod files;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lvr_core::evaluation::{evaluate_dataset, parse_ground_truth, Averaging, MatchComparison, MetricReport, OverlapMode};
use lvr_core::fusion::{write_predictions, PredictionRecord, QueryInput, RetrieveError, Stage, VideoAssets};
use lvr_core::providers::EmbeddingProvider;
use lvr_core::{parse_transcript, retrieve, segment_video, Clip};
use rayon::prelude::*;

pub use config::{Modality, RunConfig};
use config::{RerankerConfig, TransportConfig};
use files::{Manifest, QueryLine};

#[derive(Debug, Parser)]
#[command(name = "lvr", version, about = "Moment retrieval and evaluation for long audible videos")]
pub struct Cli {
    /// More log output on stderr (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split a transcript into one clip per subtitle segment.
    Segment {
        transcript: PathBuf,
        /// Manifest JSON to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank clips for every query and write JSON-lines predictions.
    Retrieve {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        retrieval: RetrievalFlags,
        /// Clip manifests produced by `segment`, one per video.
        #[arg(long = "manifest", required = true, num_args = 1..)]
        manifests: Vec<PathBuf>,
        /// JSON lines: {"query_id", "video_id", "text"}.
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against ground truth; writes report.json and curves.csv.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        eval: EvalFlags,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// segment, retrieve and evaluate in one go, with ground-truth sentences as queries.
    Pipeline {
        #[command(flatten)]
        config: ConfigArgs,
        #[command(flatten)]
        retrieval: RetrievalFlags,
        #[command(flatten)]
        eval: EvalFlags,
        #[arg(long, required = true, num_args = 1..)]
        transcripts: Vec<PathBuf>,
        #[arg(long)]
        ground_truth: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args, Default)]
pub struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any config key, e.g. `--set visual.dim=128`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Seed for mock providers.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Query worker threads (default: one per logical CPU).
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RerankerKind {
    Identity,
    Http,
}

#[derive(Debug, Args, Default)]
pub struct RetrievalFlags {
    #[arg(long)]
    pub k_visual: Option<usize>,
    #[arg(long)]
    pub k_semantic: Option<usize>,
    #[arg(long)]
    pub k_aural: Option<usize>,
    #[arg(long, value_enum)]
    pub reranker: Option<RerankerKind>,
    #[arg(long)]
    pub reranker_url: Option<String>,
    /// Longest candidate list sent to the reranker; 0 disables the cap.
    #[arg(long)]
    pub candidate_cap: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct EvalFlags {
    #[arg(long, value_parser = ["iou", "gt_coverage"])]
    pub mode: Option<String>,
    /// Comma-separated, strictly increasing, inside (0, 1).
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
    /// strict_greater (default) or greater_or_equal.
    #[arg(long)]
    pub match_comparison: Option<String>,
    /// Average recall per video first.
    #[arg(long = "macro")]
    pub video_macro: bool,
    /// Leave queries without predictions out instead of failing.
    #[arg(long)]
    pub skip_unmatched: bool,
}

pub fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        2 => tracing::Level::DEBUG,
        _ => tracing::Level::TRACE,
    };
    let _ = tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(level)
        .with_target(false)
        .try_init();
}

/// Merges file, `--set` overrides and dedicated flags, in that precedence.
pub fn resolve_config(args: &ConfigArgs, retrieval: Option<&RetrievalFlags>, eval: Option<&EvalFlags>) -> Result<RunConfig> {
    let mut c = RunConfig::load(args.config.as_deref(), &args.overrides)?;
    if let Some(seed) = args.seed {
        c.seed = seed;
    }
    if let Some(w) = args.workers {
        c.workers = w;
    }
    if let Some(r) = retrieval {
        if let Some(k) = r.k_visual {
            c.k_visual = k;
        }
        if let Some(k) = r.k_semantic {
            c.k_semantic = k;
        }
        if let Some(k) = r.k_aural {
            c.k_aural = k;
        }
        if let Some(cap) = r.candidate_cap {
            c.candidate_cap = cap;
        }
        match (r.reranker, &r.reranker_url) {
            (Some(RerankerKind::Identity), _) => c.reranker = RerankerConfig::Identity,
            (_, Some(url)) => {
                let transport = match &c.reranker {
                    RerankerConfig::Http { transport, .. } => transport.clone(),
                    RerankerConfig::Identity => TransportConfig::default(),
                };
                c.reranker = RerankerConfig::Http { url: url.clone(), transport };
            }
            (Some(RerankerKind::Http), None) => {
                if c.reranker == RerankerConfig::Identity {
                    bail!("--reranker http needs --reranker-url or a [reranker] url in the config");
                }
            }
            (None, None) => {}
        }
    }
    if let Some(e) = eval {
        if let Some(m) = &e.mode {
            c.overlap_mode = m.parse::<OverlapMode>().map_err(anyhow::Error::msg)?;
        }
        if let Some(t) = &e.thresholds {
            c.thresholds = t.clone();
        }
        if let Some(ks) = &e.ks {
            c.ks = ks.clone();
        }
        if let Some(m) = &e.match_comparison {
            c.match_comparison = m.parse::<MatchComparison>().map_err(anyhow::Error::msg)?;
        }
        if e.video_macro {
            c.averaging = Averaging::VideoMacro;
        }
        if e.skip_unmatched {
            c.skip_unmatched = true;
        }
    }
    c.validate()?;
    Ok(c)
}

pub fn segment_file(transcript: &Path) -> Result<Manifest> {
    let raw = std::fs::read(transcript).with_context(|| format!("reading transcript {}", transcript.display()))?;
    let parsed = parse_transcript(&raw).with_context(|| format!("invalid transcript {}", transcript.display()))?;
    Ok(Manifest::from_clips(parsed.video_id(), &segment_video(&parsed)))
}

fn build_assets(
    video_id: &str,
    clips: Vec<Clip>,
    visual: &dyn EmbeddingProvider,
    text: &dyn EmbeddingProvider,
) -> Result<VideoAssets> {
    let ids: Vec<String> = clips.iter().map(|c| c.clip_id.clone()).collect();
    let texts: Vec<String> = clips.iter().map(|c| c.subtitle_text.clone()).collect();
    let clip_vectors = visual
        .embed_clips(&ids)
        .map_err(|e| RetrieveError::new(Stage::Visual, e))
        .with_context(|| format!("video {video_id}"))?;
    let subtitle_vectors = text
        .embed_texts(&texts)
        .map_err(|e| RetrieveError::new(Stage::Aural, e))
        .with_context(|| format!("video {video_id}"))?;
    Ok(VideoAssets {
        video_id: video_id.to_string(),
        clip_embeddings: ids.iter().cloned().zip(clip_vectors).collect(),
        subtitle_embeddings: ids.into_iter().zip(subtitle_vectors).collect(),
        clips,
    })
}

/// Runs retrieval for every query; output order follows input order.
pub fn run_retrieval(config: &RunConfig, videos: Vec<(String, Vec<Clip>)>, queries: &[QueryLine]) -> Result<Vec<PredictionRecord>> {
    let mut by_id: HashMap<String, Vec<Clip>> = HashMap::new();
    for (video_id, clips) in videos {
        if by_id.insert(video_id.clone(), clips).is_some() {
            bail!("video {video_id} appears in more than one manifest");
        }
    }
    let visual = config.provider(Modality::Visual)?;
    let text = config.provider(Modality::Text)?;
    // only videos that are actually queried get embedded
    let mut assets: HashMap<String, VideoAssets> = HashMap::new();
    for q in queries {
        if assets.contains_key(&q.video_id) {
            continue;
        }
        let clips = by_id
            .remove(&q.video_id)
            .with_context(|| format!("query {}: no manifest for video {}", q.query_id, q.video_id))?;
        assets.insert(q.video_id.clone(), build_assets(&q.video_id, clips, visual.as_ref(), text.as_ref())?);
    }

    let texts: Vec<String> = queries.iter().map(|q| q.text.clone()).collect();
    let visual_q = visual
        .embed_texts(&texts)
        .map_err(|e| RetrieveError::new(Stage::Visual, e))
        .context("embedding queries")?;
    let text_q = text
        .embed_texts(&texts)
        .map_err(|e| RetrieveError::new(Stage::Aural, e))
        .context("embedding queries")?;

    let reranker = config.reranker()?;
    let retrieval = config.retrieval();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .context("starting worker pool")?;
    pool.install(|| {
        queries
            .par_iter()
            .zip(visual_q.into_par_iter().zip(text_q))
            .map(|(q, (visual_embedding, text_embedding))| {
                let input = QueryInput {
                    text: q.text.clone(),
                    visual_embedding,
                    text_embedding,
                };
                let result = retrieve(&assets[&q.video_id], &input, &retrieval, reranker.as_ref())
                    .with_context(|| format!("query {}/{}", q.video_id, q.query_id))?;
                tracing::debug!(video = %q.video_id, query = %q.query_id, hits = result.entries.len(), "retrieved");
                Ok(PredictionRecord::from_result(&q.video_id, &q.query_id, &result))
            })
            .collect()
    })
}

fn predictions_bytes(records: &[PredictionRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    write_predictions(&mut out, records).expect("writing to memory cannot fail");
    out
}

fn write_report(dir: &Path, report: &MetricReport) -> Result<()> {
    files::write_atomic(&dir.join("report.json"), report.to_json().as_bytes())?;
    files::write_atomic(&dir.join("curves.csv"), report.to_csv().as_bytes())?;
    print!("{}", report.summary());
    Ok(())
}

fn file_stem_for(video_id: &str) -> String {
    video_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Segment { transcript, out } => {
            let manifest = segment_file(&transcript)?;
            files::write_atomic(&out, manifest.to_json().as_bytes())?;
            tracing::info!(clips = manifest.clips.len(), out = %out.display(), "segmented");
        }
        Command::Retrieve {
            config,
            retrieval,
            manifests,
            queries,
            out,
        } => {
            let config = resolve_config(&config, Some(&retrieval), None)?;
            let videos = manifests
                .iter()
                .map(|p| files::read_manifest(p))
                .collect::<Result<Vec<_>>>()?;
            let queries = files::read_queries(&queries)?;
            let records = run_retrieval(&config, videos, &queries)?;
            files::write_atomic(&out, &predictions_bytes(&records))?;
            tracing::info!(queries = records.len(), out = %out.display(), "predictions written");
        }
        Command::Evaluate {
            config,
            eval,
            predictions,
            ground_truth,
            out,
        } => {
            let config = resolve_config(&config, None, Some(&eval))?;
            let report = lvr_core::evaluation::evaluate_paths(&predictions, &ground_truth, &config.eval_options()?)?;
            write_report(&out, &report)?;
        }
        Command::Pipeline {
            config,
            retrieval,
            eval,
            transcripts,
            ground_truth,
            out,
        } => {
            let config = resolve_config(&config, Some(&retrieval), Some(&eval))?;
            let options = config.eval_options()?;
            let raw = std::fs::read(&ground_truth).with_context(|| format!("reading ground truth {}", ground_truth.display()))?;
            let gt = parse_ground_truth(&raw)?;

            let mut videos = Vec::new();
            for path in &transcripts {
                let manifest = segment_file(path)?;
                let name = format!("clips/{}.json", file_stem_for(&manifest.video_id));
                files::write_atomic(&out.join(name), manifest.to_json().as_bytes())?;
                let video_id = manifest.video_id.clone();
                videos.push((video_id, manifest.into_clips(path)?));
            }
            let known: std::collections::HashSet<&str> = videos.iter().map(|(v, _)| v.as_str()).collect();
            let mut queries = Vec::new();
            for g in &gt {
                if !known.contains(g.video_id.as_str()) {
                    if config.skip_unmatched {
                        continue;
                    }
                    bail!("ground truth query {} refers to video {} with no transcript", g.key(), g.video_id);
                }
                queries.push(QueryLine {
                    query_id: g.query_id.clone(),
                    video_id: g.video_id.clone(),
                    text: g.query_text.clone(),
                });
            }
            files::write_atomic(&out.join("queries.jsonl"), &files::queries_jsonl(&queries))?;

            let records = run_retrieval(&config, videos, &queries)?;
            files::write_atomic(&out.join("predictions.jsonl"), &predictions_bytes(&records))?;
            let report = evaluate_dataset(&records, &gt, &options)?;
            write_report(&out, &report)?;
        }
    }
    Ok(())
}

/// Joins the error chain with ": ", skipping causes whose text the previous
/// message already ends with (several library errors inline their source).
pub fn render_error(error: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut previous = String::new();
    for cause in error.chain() {
        let msg = cause.to_string();
        if !previous.is_empty() && previous.ends_with(&msg) {
            continue;
        }
        if !out.is_empty() {
            out.push_str(": ");
        }
        out.push_str(&msg);
        previous = msg;
    }
    out
}
