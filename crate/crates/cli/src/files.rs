//! On-disk formats owned by the command-line tool: clip manifests, query
//! lists and atomic output files.

use std::io::{BufRead, Write};
use std::path::Path;

use anyhow::{Context, Result};
use lvr_core::{Clip, TimeInterval};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: line {line}: {message}")]
    Line { path: String, line: usize, message: String },
    #[error("{path}: clip {index}: {message}")]
    Clip { path: String, index: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestClip {
    pub clip_id: String,
    pub start: f64,
    pub end: f64,
    pub text: String,
}

/// Output of `segment`: the clip list of one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub video_id: String,
    pub clips: Vec<ManifestClip>,
}

impl Manifest {
    pub fn from_clips(video_id: &str, clips: &[Clip]) -> Self {
        Self {
            video_id: video_id.to_string(),
            clips: clips
                .iter()
                .map(|c| ManifestClip {
                    clip_id: c.clip_id.clone(),
                    start: c.interval.start_s(),
                    end: c.interval.end_s(),
                    text: c.subtitle_text.clone(),
                })
                .collect(),
        }
    }

    pub fn into_clips(self, path: &Path) -> Result<Vec<Clip>, FormatError> {
        let video_id = self.video_id;
        self.clips
            .into_iter()
            .enumerate()
            .map(|(index, c)| {
                let interval = TimeInterval::new(c.start, c.end).map_err(|e| FormatError::Clip {
                    path: path.display().to_string(),
                    index,
                    message: e.to_string(),
                })?;
                Ok(Clip {
                    clip_id: c.clip_id,
                    video_id: video_id.clone(),
                    interval,
                    subtitle_text: c.text,
                })
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serialization is infallible");
        s.push('\n');
        s
    }
}

pub fn read_manifest(path: &Path) -> Result<(String, Vec<Clip>)> {
    let raw = std::fs::read(path).with_context(|| format!("reading manifest {}", path.display()))?;
    let manifest: Manifest =
        serde_json::from_slice(&raw).with_context(|| format!("parsing manifest {}", path.display()))?;
    let video_id = manifest.video_id.clone();
    Ok((video_id, manifest.into_clips(path)?))
}

/// One line of a queries file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryLine {
    pub query_id: String,
    pub video_id: String,
    pub text: String,
}

pub fn read_queries(path: &Path) -> Result<Vec<QueryLine>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening queries {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading queries {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let q = serde_json::from_str(&line).map_err(|e| FormatError::Line {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(q);
    }
    Ok(out)
}

pub fn queries_jsonl(queries: &[QueryLine]) -> Vec<u8> {
    let mut out = Vec::new();
    for q in queries {
        serde_json::to_writer(&mut out, q).expect("query serialization is infallible");
        out.push(b'\n');
    }
    out
}

/// Writes through a temp file in the destination directory, then renames, so
/// a failed run never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating temp file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
