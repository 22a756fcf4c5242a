//! Test-only oracles and synthetic dataset generators.
//!
//! The recall oracle deliberately avoids the library's evaluation path: it
//! recomputes every (K, threshold, query) cell from raw interval endpoints
//! with a naive triple loop and a linear scan join.

#![allow(dead_code)]

use lvr_core::evaluation::GroundTruthEntry;
use lvr_core::fusion::{PredictionEntry, PredictionRecord};
use lvr_core::TimeInterval;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ORACLE_GRID: [f64; 10] = [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleMode {
    Iou,
    GtCoverage,
}

pub fn oracle_overlap(ps: f64, pe: f64, gs: f64, ge: f64, mode: OracleMode) -> f64 {
    let lo = if ps > gs { ps } else { gs };
    let hi = if pe < ge { pe } else { ge };
    let inter = if hi > lo { hi - lo } else { 0.0 };
    match mode {
        OracleMode::Iou => inter / ((pe - ps) + (ge - gs) - inter),
        OracleMode::GtCoverage => inter / (ge - gs),
    }
}

/// `[(k, threshold, recall)]` in k-major order, micro-averaged.
pub fn brute_force_table(
    predictions: &[PredictionRecord],
    ground_truth: &[GroundTruthEntry],
    ks: &[usize],
    thresholds: &[f64],
    mode: OracleMode,
) -> Vec<(usize, f64, f64)> {
    let mut table = Vec::new();
    for &k in ks {
        for &t in thresholds {
            let mut hits = 0u64;
            for gt in ground_truth {
                let record = predictions
                    .iter()
                    .find(|p| p.video_id == gt.video_id && p.query_id == gt.query_id)
                    .expect("oracle datasets always join");
                let mut hit = false;
                for rank in 0..k {
                    if rank >= record.results.len() {
                        break;
                    }
                    let r = &record.results[rank];
                    let o = oracle_overlap(
                        r.start,
                        r.end,
                        gt.interval.start_s(),
                        gt.interval.end_s(),
                        mode,
                    );
                    if o > t {
                        hit = true;
                        break;
                    }
                }
                if hit {
                    hits += 1;
                }
            }
            table.push((k, t, hits as f64 / ground_truth.len() as f64));
        }
    }
    table
}

pub fn oracle_average(table: &[(usize, f64, f64)], k: usize) -> f64 {
    let cells: Vec<f64> = table.iter().filter(|c| c.0 == k).map(|c| c.2).collect();
    let mut sum = 0.0;
    for c in &cells {
        sum += c;
    }
    sum / cells.len() as f64
}

fn entry(video: &str, idx: usize, start: f64, end: f64) -> PredictionEntry {
    PredictionEntry {
        clip_id: format!("{video}:{idx}"),
        start,
        end,
        fused_score: 0.0,
        visual_score: 0.0,
        aural_score: 0.0,
    }
}

/// A random evaluation dataset: at most 20 videos with at most 50
/// subtitle-style clips each, a few ground-truth queries per video and a
/// random ranked clip list per query.
pub fn random_dataset(seed: u64) -> (Vec<PredictionRecord>, Vec<GroundTruthEntry>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_videos = rng.random_range(1..=20);
    let mut predictions = Vec::new();
    let mut ground_truth = Vec::new();
    for v in 0..n_videos {
        let video_id = format!("vid{v}");
        let n_clips = rng.random_range(1..=50);
        // quarter-second grid keeps many overlaps exactly representable
        let mut t = 0.0f64;
        let mut clips = Vec::with_capacity(n_clips);
        for _ in 0..n_clips {
            let d = rng.random_range(1..=40) as f64 * 0.25;
            clips.push((t, t + d));
            t += d;
            if rng.random_bool(0.2) {
                t += rng.random_range(1..=8) as f64 * 0.25;
            }
        }
        let n_queries = rng.random_range(1..=8);
        for q in 0..n_queries {
            let (gs, ge) = if rng.random_bool(0.5) {
                clips[rng.random_range(0..n_clips)]
            } else {
                let a = &clips[rng.random_range(0..n_clips)];
                let b = &clips[rng.random_range(0..n_clips)];
                let (s, e) = (a.0.min(b.0), a.1.max(b.1));
                let jitter = rng.random_range(0..=4) as f64 * 0.25;
                (s, e + jitter)
            };
            ground_truth.push(GroundTruthEntry {
                video_id: video_id.clone(),
                query_id: format!("q{q}"),
                query_text: String::new(),
                interval: TimeInterval::new(gs, ge).unwrap(),
            });
            let len = rng.random_range(0..=15usize.min(n_clips));
            let mut pool: Vec<usize> = (0..n_clips).collect();
            let mut results = Vec::with_capacity(len);
            for _ in 0..len {
                let i = pool.swap_remove(rng.random_range(0..pool.len()));
                results.push(entry(&video_id, i, clips[i].0, clips[i].1));
            }
            predictions.push(PredictionRecord {
                video_id: video_id.clone(),
                query_id: format!("q{q}"),
                results,
            });
        }
    }
    // predictions order is independent of ground-truth order
    let mut rng2 = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    for i in (1..predictions.len()).rev() {
        predictions.swap(i, rng2.random_range(0..=i));
    }
    (predictions, ground_truth)
}
