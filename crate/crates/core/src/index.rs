//! Exact dense-vector index over entity embeddings, and the mention-embedding
//! provider boundary.
//!
//! Embedding files are little-endian:
//!
//! ```text
//! "DLEM" | u32 version | u64 n | u32 dim | n x (u64 key, dim x f32)
//! ```
//!
//! Entity files key rows by `entity_id`; mention sidecars key rows by
//! [`Mention::numeric_key`](crate::corpus::Mention::numeric_key).

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{fnv1a64, Mention};

const MAGIC: &[u8; 4] = b"DLEM";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad embedding header: {0}")]
    Header(String),
    #[error("embedding file truncated at row {row} of {expected}")]
    Truncated { row: u64, expected: u64 },
    #[error("embedding file has {0} trailing bytes after the last row")]
    TrailingBytes(usize),
    #[error("non-finite component {component} in row {row}")]
    NonFinite { row: u64, component: usize },
    #[error("duplicate key {key} at row {row}")]
    DuplicateKey { key: u64, row: u64 },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("k must be at least 1")]
    ZeroK,
}

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("no embedding for mention {key} (numeric key {numeric_key})")]
    Missing { key: String, numeric_key: u64 },
    #[error("provider failed: {0}")]
    Failed(String),
}

/// Row-major matrix of f32 embeddings keyed by a stable u64.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    keys: Vec<u64>,
    data: Vec<f32>,
    rows_by_key: HashMap<u64, usize>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        EmbeddingMatrix {
            dim,
            keys: Vec::new(),
            data: Vec::new(),
            rows_by_key: HashMap::new(),
        }
    }

    /// Appends a row, rejecting wrong dimensions, non-finite values and repeated keys.
    pub fn push(&mut self, key: u64, row: &[f32]) -> Result<(), IndexError> {
        if row.len() != self.dim {
            return Err(IndexError::DimMismatch {
                expected: self.dim,
                actual: row.len(),
            });
        }
        let row_no = self.keys.len() as u64;
        if let Some(component) = row.iter().position(|v| !v.is_finite()) {
            return Err(IndexError::NonFinite { row: row_no, component });
        }
        if self.rows_by_key.insert(key, self.keys.len()).is_some() {
            return Err(IndexError::DuplicateKey { key, row: row_no });
        }
        self.keys.push(key);
        self.data.extend_from_slice(row);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn keys(&self) -> &[u64] {
        &self.keys
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, key: u64) -> Option<&[f32]> {
        self.rows_by_key.get(&key).map(|&i| self.row(i))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.len() * (8 + 4 * self.dim));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for (i, key) in self.keys.iter().enumerate() {
            out.extend_from_slice(&key.to_le_bytes());
            for v in self.row(i) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IndexError> {
        if bytes.len() < HEADER_LEN {
            return Err(IndexError::Header(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(IndexError::Header("bad magic".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(IndexError::Header(format!("unsupported version {version}")));
        }
        let n = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let dim = u32::from_le_bytes(bytes[16..20].try_into().expect("4 bytes")) as usize;
        if dim == 0 {
            return Err(IndexError::Header("dimension must be positive".into()));
        }
        let record_len = 8 + 4 * dim;
        let mut matrix = EmbeddingMatrix::new(dim);
        let mut body = &bytes[HEADER_LEN..];
        let mut buf = vec![0f32; dim];
        for row in 0..n {
            if body.len() < record_len {
                return Err(IndexError::Truncated { row, expected: n });
            }
            let key = u64::from_le_bytes(body[..8].try_into().expect("8 bytes"));
            for (j, chunk) in body[8..record_len].chunks_exact(4).enumerate() {
                buf[j] = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
            }
            matrix.push(key, &buf)?;
            body = &body[record_len..];
        }
        if !body.is_empty() {
            return Err(IndexError::TrailingBytes(body.len()));
        }
        Ok(matrix)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), IndexError> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|source| IndexError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Loads an embedding file, validating header, length and finiteness.
pub fn ingest_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix, IndexError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| IndexError::Io {
        path: path.display().to_string(),
        source,
    })?;
    EmbeddingMatrix::from_bytes(&bytes)
}

/// A mention vector produced by an [`EmbeddingProvider`].
#[derive(Debug, Clone, PartialEq)]
pub struct MentionEmbedding(pub Vec<f32>);

impl MentionEmbedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub entity_id: u64,
    pub l2: f64,
}

/// Hits in ascending distance order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub hits: Vec<Hit>,
}

/// Bi-encoder relevance score: the inner product, accumulated in f64.
pub fn dot_score(a: &[f32], b: &[f32]) -> Result<f64, IndexError> {
    if a.len() != b.len() {
        return Err(IndexError::DimMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(a.iter().zip(b).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum())
}

fn squared_l2(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = f64::from(*x) - f64::from(*y);
            d * d
        })
        .sum()
}

/// Euclidean distance accumulated in f64.
pub fn l2_distance(a: &[f32], b: &[f32]) -> Result<f64, IndexError> {
    if a.len() != b.len() {
        return Err(IndexError::DimMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(squared_l2(a, b).sqrt())
}

/// Max-heap entry ordered by (squared distance, entity id).
struct Candidate {
    d2: f64,
    id: u64,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.id.cmp(&other.id))
    }
}

/// Exact k nearest rows by Euclidean distance; ties go to the lower entity id.
pub fn knn(matrix: &EmbeddingMatrix, query: &MentionEmbedding, k: usize) -> Result<RetrievalResult, IndexError> {
    if k == 0 {
        return Err(IndexError::ZeroK);
    }
    if query.dim() != matrix.dim() {
        return Err(IndexError::DimMismatch {
            expected: matrix.dim(),
            actual: query.dim(),
        });
    }
    let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k.min(matrix.len()) + 1);
    for (i, &id) in matrix.keys().iter().enumerate() {
        let cand = Candidate {
            d2: squared_l2(&query.0, matrix.row(i)),
            id,
        };
        if heap.len() < k {
            heap.push(cand);
        } else if heap.peek().is_some_and(|worst| cand < *worst) {
            heap.pop();
            heap.push(cand);
        }
    }
    let hits = heap
        .into_sorted_vec()
        .into_iter()
        .map(|c| Hit {
            entity_id: c.id,
            l2: c.d2.sqrt(),
        })
        .collect();
    Ok(RetrievalResult { hits })
}

/// Source of mention vectors. Implementations must be deterministic.
pub trait EmbeddingProvider: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, mention: &Mention) -> Result<MentionEmbedding, ProviderError>;
}

/// Replays vectors exported by an external encoder, keyed by mention.
#[derive(Debug, Clone)]
pub struct FileProvider {
    sidecar: EmbeddingMatrix,
}

impl FileProvider {
    pub fn new(sidecar: EmbeddingMatrix) -> Self {
        FileProvider { sidecar }
    }

    pub fn open(path: impl AsRef<Path>) -> Result<Self, IndexError> {
        Ok(FileProvider::new(ingest_embeddings(path)?))
    }
}

impl EmbeddingProvider for FileProvider {
    fn dim(&self) -> usize {
        self.sidecar.dim()
    }

    fn embed(&self, mention: &Mention) -> Result<MentionEmbedding, ProviderError> {
        let numeric_key = mention.numeric_key();
        self.sidecar
            .get(numeric_key)
            .map(|v| MentionEmbedding(v.to_vec()))
            .ok_or_else(|| ProviderError::Missing {
                key: mention.key(),
                numeric_key,
            })
    }
}

/// Feature-hashing embedder for fixtures and tests: every lowercased token adds a signed
/// weight to one hashed bucket, and the result is scaled to unit length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HashProvider {
    pub dim: usize,
    pub surface_weight: f32,
    pub context_weight: f32,
}

impl HashProvider {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        HashProvider {
            dim,
            surface_weight: 1.0,
            context_weight: 0.25,
        }
    }

    fn accumulate(&self, acc: &mut [f64], text: &str, weight: f32) {
        for token in text.split_whitespace() {
            let h = fnv1a64(token.to_lowercase().as_bytes());
            let bucket = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
            acc[bucket] += sign * f64::from(weight);
        }
    }

    fn finish(acc: Vec<f64>) -> Vec<f32> {
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return acc.into_iter().map(|v| v as f32).collect();
        }
        acc.into_iter().map(|v| (v / norm) as f32).collect()
    }

    /// Embeds free text with surface weight; used for entity labels in fixtures.
    pub fn embed_text(&self, text: &str) -> Vec<f32> {
        let mut acc = vec![0f64; self.dim];
        self.accumulate(&mut acc, text, self.surface_weight);
        Self::finish(acc)
    }
}

impl EmbeddingProvider for HashProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, mention: &Mention) -> Result<MentionEmbedding, ProviderError> {
        let mut acc = vec![0f64; self.dim];
        self.accumulate(&mut acc, &mention.surface, self.surface_weight);
        self.accumulate(&mut acc, &mention.left_context, self.context_weight);
        self.accumulate(&mut acc, &mention.right_context, self.context_weight);
        Ok(MentionEmbedding(Self::finish(acc)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::EntityType;

    fn matrix(rows: &[(u64, &[f32])]) -> EmbeddingMatrix {
        let mut m = EmbeddingMatrix::new(rows[0].1.len());
        for (k, r) in rows {
            m.push(*k, r).unwrap();
        }
        m
    }

    fn mention(surface: &str) -> Mention {
        Mention {
            doc_id: "d".into(),
            start: 0,
            end: surface.chars().count(),
            surface: surface.into(),
            etype: EntityType::Per,
            date: 1900,
            left_context: "left words".into(),
            right_context: String::new(),
            gold: None,
        }
    }

    #[test]
    fn empty_file_is_empty_matrix() {
        let m = EmbeddingMatrix::new(4);
        let back = EmbeddingMatrix::from_bytes(&m.to_bytes()).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.dim(), 4);
    }

    #[test]
    fn three_rows_round_trip() {
        let m = matrix(&[(10, &[1.0, 2.0]), (11, &[3.0, 4.0]), (12, &[5.0, 6.0])]);
        let back = EmbeddingMatrix::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back.get(11).unwrap(), &[3.0, 4.0]);
    }

    #[test]
    fn truncated_body_names_row() {
        let m = matrix(&[(1, &[1.0, 2.0]), (2, &[3.0, 4.0]), (3, &[5.0, 6.0])]);
        let mut bytes = m.to_bytes();
        bytes.truncate(bytes.len() - 3);
        match EmbeddingMatrix::from_bytes(&bytes) {
            Err(IndexError::Truncated { row: 2, expected: 3 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_and_trailing_rejected() {
        let mut bytes = matrix(&[(1, &[1.0, 2.0])]).to_bytes();
        let at = HEADER_LEN + 8 + 4;
        bytes[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            EmbeddingMatrix::from_bytes(&bytes),
            Err(IndexError::NonFinite { row: 0, component: 1 })
        ));
        let mut bytes = matrix(&[(1, &[1.0, 2.0])]).to_bytes();
        bytes.push(0);
        assert!(matches!(EmbeddingMatrix::from_bytes(&bytes), Err(IndexError::TrailingBytes(1))));
    }

    #[test]
    fn self_query_is_first_hit() {
        let m = matrix(&[(1, &[0.0, 1.0]), (2, &[3.0, -1.0]), (3, &[0.5, 0.5])]);
        let r = knn(&m, &MentionEmbedding(vec![3.0, -1.0]), 2).unwrap();
        assert_eq!(r.hits[0], Hit { entity_id: 2, l2: 0.0 });
    }

    #[test]
    fn k_larger_than_n_returns_all() {
        let m = matrix(&[(1, &[0.0]), (2, &[1.0]), (3, &[2.0])]);
        let r = knn(&m, &MentionEmbedding(vec![0.1]), 8).unwrap();
        assert_eq!(r.hits.iter().map(|h| h.entity_id).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn ties_broken_by_lower_id() {
        let m = matrix(&[(9, &[1.0]), (4, &[-1.0]), (6, &[1.0])]);
        let r = knn(&m, &MentionEmbedding(vec![0.0]), 2).unwrap();
        assert_eq!(r.hits.iter().map(|h| h.entity_id).collect::<Vec<_>>(), vec![4, 6]);
    }

    #[test]
    fn knn_errors() {
        let m = matrix(&[(1, &[0.0, 1.0])]);
        assert!(matches!(knn(&m, &MentionEmbedding(vec![1.0]), 1), Err(IndexError::DimMismatch { .. })));
        assert!(matches!(knn(&m, &MentionEmbedding(vec![1.0, 0.0]), 0), Err(IndexError::ZeroK)));
    }

    #[test]
    fn dot_score_examples() {
        assert_eq!(dot_score(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 0.0);
        assert_eq!(dot_score(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        assert!(dot_score(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn file_provider_lookup() {
        let m = mention("Amendola");
        let mut side = EmbeddingMatrix::new(2);
        side.push(m.numeric_key(), &[0.25, 0.5]).unwrap();
        let p = FileProvider::new(side);
        assert_eq!(p.embed(&m).unwrap().0, vec![0.25, 0.5]);
        assert!(matches!(p.embed(&mention("Moro")), Err(ProviderError::Missing { .. })));
    }

    #[test]
    fn hash_provider_is_deterministic_and_unit_norm() {
        let p = HashProvider::new(32);
        let a = p.embed(&mention("Giorgio Amendola")).unwrap();
        let b = p.embed(&mention("Giorgio Amendola")).unwrap();
        assert_eq!(a, b);
        let norm: f64 = a.0.iter().map(|v| f64::from(*v).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
        assert_eq!(p.embed_text("Amendola"), p.embed_text("AMENDOLA"));
    }
}
