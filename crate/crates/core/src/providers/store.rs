//! Binary embedding store (`.lvre`).
//!
//! Little-endian layout:
//!
//! ```text
//! magic   "LVRE"            4 bytes
//! version u16               currently 1
//! dim     u32               > 0
//! count   u64
//! count x { id_len u16, id utf-8 bytes, dim x f32 }
//! ```

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use super::{EmbeddingProvider, ProviderError};
use crate::embedding::EmbeddingVector;

pub const STORE_MAGIC: &[u8; 4] = b"LVRE";
pub const STORE_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 8;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: not an embedding store")]
    BadMagic,
    #[error("unsupported store version {0}")]
    UnsupportedVersion(u16),
    #[error("store dimension must be positive")]
    ZeroDim,
    #[error("truncated file while reading {0}")]
    Truncated(&'static str),
    #[error("payload length mismatch for id {id}: expected {expected} components, found {found}")]
    PayloadLengthMismatch { id: String, expected: usize, found: usize },
    #[error("{0} trailing bytes after the last record")]
    TrailingBytes(usize),
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("id is not valid utf-8 in record {0}")]
    InvalidId(u64),
    #[error("id longer than 65535 bytes: {0}")]
    IdTooLong(String),
    #[error("non-finite component in vector {0}")]
    NonFinite(String),
    #[error("vector {id} has dimension {found}, store expects {expected}")]
    DimMismatch { id: String, expected: usize, found: usize },
    #[error("unknown id {0}")]
    UnknownId(String),
}

/// Id to vector map with a fixed dimension; iteration follows insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<EmbeddingVector>,
    index: HashMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Result<Self, StoreError> {
        if dim == 0 {
            return Err(StoreError::ZeroDim);
        }
        Ok(Self {
            dim,
            ids: Vec::new(),
            vectors: Vec::new(),
            index: HashMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: EmbeddingVector) -> Result<(), StoreError> {
        let id = id.into();
        if id.len() > usize::from(u16::MAX) {
            return Err(StoreError::IdTooLong(id));
        }
        if vector.dim() != self.dim {
            return Err(StoreError::DimMismatch {
                id,
                expected: self.dim,
                found: vector.dim(),
            });
        }
        if self.index.contains_key(&id) {
            return Err(StoreError::DuplicateId(id));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.vectors.push(vector);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&EmbeddingVector, StoreError> {
        self.index
            .get(id)
            .map(|&i| &self.vectors[i])
            .ok_or_else(|| StoreError::UnknownId(id.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &EmbeddingVector)> {
        self.ids.iter().map(String::as_str).zip(&self.vectors)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.len() * (2 + 16 + self.dim * 4));
        out.extend_from_slice(STORE_MAGIC);
        out.extend_from_slice(&STORE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for (id, v) in self.iter() {
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for &x in v.values() {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != STORE_MAGIC {
            return Err(StoreError::BadMagic);
        }
        let version = u16::from_le_bytes(r.array("version")?);
        if version != STORE_VERSION {
            return Err(StoreError::UnsupportedVersion(version));
        }
        let dim = u32::from_le_bytes(r.array("dim")?) as usize;
        let count = u64::from_le_bytes(r.array("count")?);
        let mut store = Self::new(dim)?;

        for record in 0..count {
            let id_len = u16::from_le_bytes(r.array("id length")?) as usize;
            let id = std::str::from_utf8(r.take(id_len, "id")?)
                .map_err(|_| StoreError::InvalidId(record))?
                .to_string();
            let available = r.remaining() / 4;
            if available < dim {
                return Err(StoreError::PayloadLengthMismatch {
                    id,
                    expected: dim,
                    found: available,
                });
            }
            let values: Vec<f32> = r
                .take(dim * 4, "vector")?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let vector = EmbeddingVector::from_f32(&values).map_err(|_| StoreError::NonFinite(id.clone()))?;
            store.insert(id, vector)?;
        }
        if r.remaining() > 0 {
            return Err(StoreError::TrailingBytes(r.remaining()));
        }
        Ok(store)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], StoreError> {
        if self.remaining() < n {
            return Err(StoreError::Truncated(what));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self, what: &'static str) -> Result<[u8; N], StoreError> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }
}

pub fn load_store(path: impl AsRef<Path>) -> Result<EmbeddingStore, StoreError> {
    EmbeddingStore::from_bytes(&std::fs::read(path)?)
}

/// Writes the store through a temporary file in the target directory, then
/// renames it into place.
pub fn save_store(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<(), StoreError> {
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(&store.to_bytes())?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| StoreError::Io(e.error))?;
    Ok(())
}

/// Serves vectors from precomputed stores: clip vectors keyed by clip id,
/// text vectors keyed by the exact text.
#[derive(Debug, Clone)]
pub struct StoreProvider {
    dim: usize,
    clips: Option<EmbeddingStore>,
    texts: Option<EmbeddingStore>,
}

impl StoreProvider {
    pub fn new(clips: Option<EmbeddingStore>, texts: Option<EmbeddingStore>) -> Result<Self, ProviderError> {
        let dim = match (&clips, &texts) {
            (Some(c), Some(t)) if c.dim() != t.dim() => {
                return Err(ProviderError::DimensionMismatch {
                    expected: c.dim(),
                    received: t.dim(),
                })
            }
            (Some(c), _) => c.dim(),
            (None, Some(t)) => t.dim(),
            (None, None) => return Err(ProviderError::Unsupported("a store provider without stores")),
        };
        Ok(Self { dim, clips, texts })
    }

    fn lookup(store: Option<&EmbeddingStore>, keys: &[String], what: &'static str) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let store = store.ok_or(ProviderError::Unsupported(what))?;
        keys.iter()
            .map(|k| {
                store
                    .get(k)
                    .cloned()
                    .map_err(|_| ProviderError::UnknownId(k.clone()))
            })
            .collect()
    }
}

impl EmbeddingProvider for StoreProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        Self::lookup(self.texts.as_ref(), texts, "text embedding")
    }

    fn embed_clips(&self, clip_ids: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        Self::lookup(self.clips.as_ref(), clip_ids, "clip embedding")
    }
}
