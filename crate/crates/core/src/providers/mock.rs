//! Deterministic hash-derived embeddings.
//!
//! Scheme, reproducible in any language:
//!
//! 1. `h = FNV-1a-64(utf8 bytes of the input)` (offset basis
//!    `0xcbf29ce484222325`, prime `0x100000001b3`).
//! 2. `state = h XOR (seed * 0x9E3779B97F4A7C15 mod 2^64)`; a zero state is
//!    replaced by `0x9E3779B97F4A7C15`.
//! 3. For each component, step xorshift64* (`x ^= x >> 12; x ^= x << 25;
//!    x ^= x >> 27; out = x * 0x2545F4914F6CDD1D mod 2^64`) and map
//!    `out >> 11` to `[-1, 1)` as `(out >> 11) * 2^-53 * 2 - 1`.
//! 4. L2-normalize in f64, then round every component to f32.

use super::{EmbeddingProvider, ProviderError};
use crate::embedding::EmbeddingVector;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

#[derive(Debug, Clone)]
pub struct XorShift64Star(u64);

impl XorShift64Star {
    pub fn new(state: u64) -> Self {
        Self(if state == 0 { GOLDEN } else { state })
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.0 = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    /// Uniform in [-1, 1).
    pub fn next_signed_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64) * 2.0 - 1.0
    }
}

#[derive(Debug, Clone)]
pub struct MockProvider {
    seed: u64,
    dim: usize,
}

impl MockProvider {
    /// # Panics
    /// If `dim` is zero.
    pub fn new(seed: u64, dim: usize) -> Self {
        assert!(dim >= 1, "mock provider dimension must be positive");
        Self { seed, dim }
    }

    pub fn embed_one(&self, input: &str) -> EmbeddingVector {
        let mut rng = XorShift64Star::new(fnv1a64(input.as_bytes()) ^ self.seed.wrapping_mul(GOLDEN));
        let raw: Vec<f64> = (0..self.dim).map(|_| rng.next_signed_unit()).collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        let values = if norm > 0.0 {
            raw.iter().map(|v| f64::from((v / norm) as f32)).collect()
        } else {
            let mut e = vec![0.0; self.dim];
            e[0] = 1.0;
            e
        };
        EmbeddingVector::new(values).expect("normalized mock vector is finite")
    }
}

impl EmbeddingProvider for MockProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }

    fn embed_clips(&self, clip_ids: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        Ok(clip_ids.iter().map(|c| self.embed_one(c)).collect())
    }
}
