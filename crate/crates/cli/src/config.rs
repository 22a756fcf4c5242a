//! Run configuration: a TOML file, then `--set key=value` overrides, then
//! dedicated flags.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use lvr_core::aural::{IdentityReranker, LexicalOptions, Reranker};
use lvr_core::evaluation::{
    Averaging, EvalOptions, MatchComparison, MatchCriterion, OverlapMode, ThresholdGrid,
    DEFAULT_KS, DEFAULT_THRESHOLDS,
};
use lvr_core::providers::{
    load_store, EmbeddingProvider, HttpEmbeddingProvider, HttpReranker, HttpSettings,
    MockProvider, StoreProvider,
};
use lvr_core::RetrievalConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub k_visual: usize,
    pub k_semantic: usize,
    pub k_aural: usize,
    pub overlap_mode: OverlapMode,
    pub match_comparison: MatchComparison,
    pub thresholds: Vec<f64>,
    pub ks: Vec<usize>,
    pub averaging: Averaging,
    pub skip_unmatched: bool,
    pub seed: u64,
    /// Query worker threads; 0 means one per logical CPU.
    pub workers: usize,
    /// 0 disables the cap.
    pub candidate_cap: usize,
    pub rerank_fallback: bool,
    pub english_stopwords: bool,
    pub visual: ProviderConfig,
    pub text: ProviderConfig,
    pub reranker: RerankerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let retrieval = RetrievalConfig::default();
        Self {
            k_visual: retrieval.k_visual,
            k_semantic: retrieval.k_semantic,
            k_aural: retrieval.k_aural,
            overlap_mode: OverlapMode::default(),
            match_comparison: MatchComparison::default(),
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            ks: DEFAULT_KS.to_vec(),
            averaging: Averaging::Micro,
            skip_unmatched: false,
            seed: 0,
            workers: 0,
            candidate_cap: retrieval.candidate_cap.unwrap_or(0),
            rerank_fallback: retrieval.rerank_fallback,
            english_stopwords: false,
            visual: ProviderConfig::default(),
            text: ProviderConfig::default(),
            reranker: RerankerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProviderConfig {
    /// Hash-seeded deterministic vectors, for tests and dry runs.
    Mock { dim: usize },
    /// Precomputed binary stores.
    Store {
        clips: Option<PathBuf>,
        texts: Option<PathBuf>,
    },
    Http {
        url: String,
        dim: usize,
        #[serde(flatten)]
        transport: TransportConfig,
    },
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig::Mock { dim: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransportConfig {
    pub timeout_s: f64,
    pub retries: u32,
    pub backoff_ms: u64,
    /// Name of the environment variable holding a bearer token.
    pub token_env: Option<String>,
    pub batch_size: usize,
    pub max_in_flight: usize,
}

impl Default for TransportConfig {
    fn default() -> Self {
        let s = HttpSettings::default();
        Self {
            timeout_s: s.timeout.as_secs_f64(),
            retries: s.retries,
            backoff_ms: s.backoff.as_millis() as u64,
            token_env: None,
            batch_size: s.batch_size,
            max_in_flight: s.max_in_flight,
        }
    }
}

impl TransportConfig {
    fn settings(&self) -> Result<HttpSettings> {
        if !(self.timeout_s.is_finite() && self.timeout_s > 0.0) {
            bail!("timeout_s must be positive");
        }
        let bearer_token = match &self.token_env {
            Some(var) => Some(std::env::var(var).with_context(|| format!("environment variable {var} is not set"))?),
            None => None,
        };
        Ok(HttpSettings {
            timeout: Duration::from_secs_f64(self.timeout_s),
            retries: self.retries,
            backoff: Duration::from_millis(self.backoff_ms),
            bearer_token,
            batch_size: self.batch_size.max(1),
            max_in_flight: self.max_in_flight.max(1),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RerankerConfig {
    #[default]
    Identity,
    Http {
        url: String,
        #[serde(flatten)]
        transport: TransportConfig,
    },
}

/// Which stream a provider serves; the text stream's mock is seeded apart
/// from the visual one so the two modalities disagree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Visual,
    Text,
}

impl RunConfig {
    /// Reads a TOML file and applies `key=value` overrides. Relative store
    /// paths resolve against the config file's directory.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let raw = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                raw.parse::<toml::Table>()
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut config: RunConfig = toml::Value::Table(table)
            .try_into()
            .context("invalid configuration")?;
        if let Some(base) = path.and_then(Path::parent) {
            for provider in [&mut config.visual, &mut config.text] {
                if let ProviderConfig::Store { clips, texts } = provider {
                    for p in [clips, texts].into_iter().flatten() {
                        if p.is_relative() {
                            *p = base.join(&*p);
                        }
                    }
                }
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, k) in [("k_visual", self.k_visual), ("k_semantic", self.k_semantic), ("k_aural", self.k_aural)] {
            if k == 0 {
                bail!("{name} must be at least 1");
            }
        }
        if self.ks.is_empty() || self.ks.contains(&0) {
            bail!("ks must be a non-empty list of positive integers");
        }
        ThresholdGrid::new(self.thresholds.clone())?;
        Ok(())
    }

    pub fn retrieval(&self) -> RetrievalConfig {
        RetrievalConfig {
            k_visual: self.k_visual,
            k_semantic: self.k_semantic,
            k_aural: self.k_aural,
            candidate_cap: (self.candidate_cap > 0).then_some(self.candidate_cap),
            lexical: if self.english_stopwords {
                LexicalOptions::english_stopwords()
            } else {
                LexicalOptions::default()
            },
            rerank_fallback: self.rerank_fallback,
        }
    }

    pub fn eval_options(&self) -> Result<EvalOptions> {
        Ok(EvalOptions {
            ks: self.ks.clone(),
            grid: ThresholdGrid::new(self.thresholds.clone())?,
            criterion: MatchCriterion {
                mode: self.overlap_mode,
                comparison: self.match_comparison,
            },
            averaging: self.averaging,
            skip_unmatched: self.skip_unmatched,
        })
    }

    pub fn provider(&self, modality: Modality) -> Result<Arc<dyn EmbeddingProvider>> {
        let (cfg, seed) = match modality {
            Modality::Visual => (&self.visual, self.seed),
            Modality::Text => (&self.text, self.seed.wrapping_add(1)),
        };
        Ok(match cfg {
            ProviderConfig::Mock { dim } => {
                if *dim == 0 {
                    bail!("mock provider dim must be positive");
                }
                Arc::new(MockProvider::new(seed, *dim))
            }
            ProviderConfig::Store { clips, texts } => {
                let load = |p: &Option<PathBuf>| -> Result<_> {
                    p.as_ref()
                        .map(|p| load_store(p).with_context(|| format!("loading store {}", p.display())))
                        .transpose()
                };
                Arc::new(StoreProvider::new(load(clips)?, load(texts)?)?)
            }
            ProviderConfig::Http { url, dim, transport } => {
                Arc::new(HttpEmbeddingProvider::new(url.clone(), *dim, transport.settings()?)?)
            }
        })
    }

    pub fn reranker(&self) -> Result<Arc<dyn Reranker>> {
        Ok(match &self.reranker {
            RerankerConfig::Identity => Arc::new(IdentityReranker),
            RerankerConfig::Http { url, transport } => Arc::new(HttpReranker::new(url.clone(), transport.settings()?)?),
        })
    }
}

/// Sets a dotted key, e.g. `visual.dim=128` or `reranker.kind=http`. The
/// value is read as a TOML value and falls back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .with_context(|| format!("override `{assignment}` is not key=value"))?;
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields at least one part");
    let mut cursor = table;
    for part in parents {
        let entry = cursor
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cursor = entry
            .as_table_mut()
            .with_context(|| format!("override `{key}`: `{part}` is not a table"))?;
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}
