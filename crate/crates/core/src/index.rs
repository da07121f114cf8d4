//! Exact maximum-inner-product search over L2-normalized prompt embeddings.
//!
//! Vectors live in one contiguous `f32` block with a parallel metadata
//! table. Scoring accumulates in `f64` so that rankings match a naive
//! double-precision scan.
//!
//! On-disk layout (little-endian):
//!
//! ```text
//! "ASTRAIDX" | u32 version | u32 dim | u64 count | f32[count * dim]
//!            | u64 metadata_len | metadata_len bytes of UTF-8 JSON
//! ```

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const EMBEDDING_DIM: usize = 384;
pub const INDEX_MAGIC: &[u8; 8] = b"ASTRAIDX";
pub const INDEX_VERSION: u32 = 1;
/// Byte offset of the vector block in an index file.
pub const VECTOR_BLOCK_OFFSET: usize = 8 + 4 + 4 + 8;

const NORM_TOL: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("expected a {expected}-dimensional vector, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("vector has non-finite components")]
    NonFinite,
    #[error("vector norm {0} is not within 1e-4 of 1")]
    NotNormalized(f64),
    #[error("mean pooling needs at least one row")]
    EmptyPool,
    #[error("duplicate entry id {0}")]
    DuplicateId(u64),
    #[error("k must be at least 1")]
    ZeroK,
    #[error("index file {path}: {defect}")]
    Corrupt { path: String, defect: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Ingest {
        path: String,
        line: usize,
        reason: String,
    },
}

/// A unit-norm embedding of [`EMBEDDING_DIM`] components.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    /// Wraps a vector that is expected to already be unit norm.
    pub fn from_normalized(values: Vec<f32>) -> Result<Self, IndexError> {
        check_dim(values.len())?;
        let norm = norm_f64(&values);
        if !norm.is_finite() {
            return Err(IndexError::NonFinite);
        }
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(IndexError::NotNormalized(norm));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

fn check_dim(got: usize) -> Result<(), IndexError> {
    if got != EMBEDDING_DIM {
        return Err(IndexError::Dimension {
            expected: EMBEDDING_DIM,
            got,
        });
    }
    Ok(())
}

fn norm_f64(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

pub fn l2_normalize(v: &[f32]) -> Result<EmbeddingVector, IndexError> {
    check_dim(v.len())?;
    let norm = norm_f64(v);
    if !norm.is_finite() {
        return Err(IndexError::NonFinite);
    }
    if norm == 0.0 {
        return Err(IndexError::ZeroVector);
    }
    Ok(EmbeddingVector(
        v.iter().map(|&x| (x as f64 / norm) as f32).collect(),
    ))
}

/// Componentwise mean of token embeddings.
pub fn mean_pool(rows: &[Vec<f32>]) -> Result<Vec<f32>, IndexError> {
    let first = rows.first().ok_or(IndexError::EmptyPool)?;
    let dim = first.len();
    let mut acc = vec![0.0f64; dim];
    for row in rows {
        if row.len() != dim {
            return Err(IndexError::Dimension {
                expected: dim,
                got: row.len(),
            });
        }
        for (a, &x) in acc.iter_mut().zip(row) {
            *a += x as f64;
        }
    }
    let n = rows.len() as f64;
    Ok(acc.into_iter().map(|a| (a / n) as f32).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryMeta {
    pub id: u64,
    pub prompt: String,
    pub pose_ref: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub id: u64,
    pub prompt: String,
    pub pose_ref: String,
    pub vector: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub id: u64,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

/// Immutable flat index; rebuild to change its contents.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatIndex {
    dim: usize,
    vectors: Vec<f32>,
    meta: Vec<EntryMeta>,
}

impl Default for FlatIndex {
    fn default() -> Self {
        Self {
            dim: EMBEDDING_DIM,
            vectors: Vec::new(),
            meta: Vec::new(),
        }
    }
}

#[inline]
fn dot(query: &[f64], row: &[f32]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut q = query.chunks_exact(4);
    let mut r = row.chunks_exact(4);
    for (qc, rc) in (&mut q).zip(&mut r) {
        acc[0] += qc[0] * rc[0] as f64;
        acc[1] += qc[1] * rc[1] as f64;
        acc[2] += qc[2] * rc[2] as f64;
        acc[3] += qc[3] * rc[3] as f64;
    }
    let tail: f64 = q
        .remainder()
        .iter()
        .zip(r.remainder())
        .map(|(a, &b)| a * b as f64)
        .sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Descending score, then ascending id.
fn hit_order(a: &(f64, u64), b: &(f64, u64)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

impl FlatIndex {
    pub fn build(entries: Vec<IndexEntry>) -> Result<Self, IndexError> {
        let mut seen = HashSet::with_capacity(entries.len());
        let mut vectors = Vec::with_capacity(entries.len() * EMBEDDING_DIM);
        let mut meta = Vec::with_capacity(entries.len());
        for entry in entries {
            if !seen.insert(entry.id) {
                return Err(IndexError::DuplicateId(entry.id));
            }
            check_dim(entry.vector.0.len())?;
            vectors.extend_from_slice(&entry.vector.0);
            meta.push(EntryMeta {
                id: entry.id,
                prompt: entry.prompt,
                pose_ref: entry.pose_ref,
            });
        }
        Ok(Self {
            dim: EMBEDDING_DIM,
            vectors,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[EntryMeta] {
        &self.meta
    }

    pub fn get(&self, id: u64) -> Option<&EntryMeta> {
        self.meta.iter().find(|m| m.id == id)
    }

    pub fn vector(&self, row: usize) -> &[f32] {
        &self.vectors[row * self.dim..(row + 1) * self.dim]
    }

    /// Raw little-endian bytes of the vector block, as written to disk.
    pub fn vector_block_bytes(&self) -> Vec<u8> {
        self.vectors.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn vector_block_digest(&self) -> [u8; 32] {
        Sha256::digest(self.vector_block_bytes()).into()
    }

    /// Scores every entry against `query`, in storage order.
    pub fn scores(&self, query: &EmbeddingVector) -> Result<Vec<f64>, IndexError> {
        check_dim(query.0.len())?;
        let q: Vec<f64> = query.0.iter().map(|&x| x as f64).collect();
        Ok(self
            .vectors
            .chunks_exact(self.dim)
            .map(|row| dot(&q, row))
            .collect())
    }

    /// The `k` entries with the largest inner product against `query`.
    pub fn search(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<SearchHit>, IndexError> {
        if k == 0 {
            return Err(IndexError::ZeroK);
        }
        let mut scored: Vec<(f64, u64)> = self
            .scores(query)?
            .into_iter()
            .zip(self.meta.iter())
            .map(|(s, m)| (s, m.id))
            .collect();
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, hit_order);
            scored.truncate(k);
        }
        scored.sort_by(hit_order);
        Ok(scored
            .into_iter()
            .enumerate()
            .map(|(i, (score, id))| SearchHit {
                id,
                score,
                rank: i + 1,
            })
            .collect())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.meta).expect("metadata serializes");
        let mut out =
            Vec::with_capacity(VECTOR_BLOCK_OFFSET + self.vectors.len() * 4 + 8 + meta.len());
        out.extend_from_slice(INDEX_MAGIC);
        out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u64).to_le_bytes());
        for v in &self.vectors {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<Self, IndexError> {
        let corrupt = |defect: String| IndexError::Corrupt {
            path: origin.to_string(),
            defect,
        };
        if bytes.len() < VECTOR_BLOCK_OFFSET {
            return Err(corrupt(format!(
                "truncated header ({} of {VECTOR_BLOCK_OFFSET} bytes)",
                bytes.len()
            )));
        }
        if &bytes[..8] != INDEX_MAGIC {
            return Err(corrupt("bad magic bytes".into()));
        }
        let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let u64_at = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        let version = u32_at(8);
        if version != INDEX_VERSION {
            return Err(corrupt(format!("unsupported version {version}")));
        }
        let dim = u32_at(12) as usize;
        if dim != EMBEDDING_DIM {
            return Err(corrupt(format!(
                "dimension {dim}, expected {EMBEDDING_DIM}"
            )));
        }
        let count = u64_at(16);
        let block_len = count
            .checked_mul(dim as u64 * 4)
            .and_then(|n| usize::try_from(n).ok())
            .ok_or_else(|| corrupt(format!("entry count {count} overflows")))?;
        let meta_len_at = VECTOR_BLOCK_OFFSET + block_len;
        if bytes.len() < meta_len_at + 8 {
            return Err(corrupt("truncated vector block".into()));
        }
        let vectors: Vec<f32> = bytes[VECTOR_BLOCK_OFFSET..meta_len_at]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let meta_len = usize::try_from(u64_at(meta_len_at))
            .map_err(|_| corrupt("metadata length overflows".into()))?;
        let meta_start = meta_len_at + 8;
        let meta_end = meta_start
            .checked_add(meta_len)
            .ok_or_else(|| corrupt("metadata length overflows".into()))?;
        if bytes.len() < meta_end {
            return Err(corrupt("truncated metadata block".into()));
        }
        if bytes.len() > meta_end {
            return Err(corrupt(format!(
                "{} trailing bytes after metadata",
                bytes.len() - meta_end
            )));
        }
        let text = std::str::from_utf8(&bytes[meta_start..meta_end])
            .map_err(|e| corrupt(format!("metadata is not UTF-8: {e}")))?;
        let meta: Vec<EntryMeta> = serde_json::from_str(text)
            .map_err(|e| corrupt(format!("metadata is not valid JSON: {e}")))?;
        if meta.len() as u64 != count {
            return Err(corrupt(format!(
                "header declares {count} entries but metadata lists {}",
                meta.len()
            )));
        }
        let mut seen = HashSet::with_capacity(meta.len());
        for m in &meta {
            if !seen.insert(m.id) {
                return Err(corrupt(format!("duplicate entry id {}", m.id)));
            }
        }
        for (row, chunk) in vectors.chunks_exact(dim).enumerate() {
            let norm = norm_f64(chunk);
            if !((norm - 1.0).abs() <= NORM_TOL) {
                return Err(corrupt(format!("vector {row} has norm {norm}")));
            }
        }
        Ok(Self { dim, vectors, meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IndexError> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|source| IndexError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IndexError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| IndexError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(&bytes, &path.display().to_string())
    }
}

/// One line of the bulk-ingest format. A missing vector is filled in by an
/// embedding client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestRecord {
    pub id: u64,
    pub prompt: String,
    pub pose_ref: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vector: Option<Vec<f32>>,
}

pub fn read_ingest_jsonl(path: impl AsRef<Path>) -> Result<Vec<IngestRecord>, IndexError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let file = fs::File::open(path).map_err(|source| IndexError::Io {
        path: shown.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| IndexError::Io {
            path: shown.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: IngestRecord = serde_json::from_str(&line).map_err(|e| IndexError::Ingest {
            path: shown.clone(),
            line: n + 1,
            reason: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}
