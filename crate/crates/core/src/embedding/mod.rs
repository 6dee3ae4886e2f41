//! Text embeddings, the embedding cache, and the exact per-level label index.

mod cache;
mod index;
mod remote;

pub use cache::{CachedEmbedder, EmbeddingCache};
pub use index::{
    BuildOptions, Candidate, CandidateSet, IndexError, LevelIndex, RetrievalConfig, RetrievalMode,
};
pub use remote::{RemoteEmbedder, RemoteEmbedderConfig};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{fnv1a64, tokens};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VectorError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("cosine is undefined for the zero vector")]
    ZeroVector,
    #[error("embedding has non-finite entries")]
    NonFinite,
    #[error("embedding is empty")]
    Empty,
}

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding provider failed after {retries} retries: {message}")]
    Provider { message: String, retries: u32 },
    #[error("provider returned an invalid vector: {0}")]
    InvalidVector(#[from] VectorError),
    #[error("provider returned {got} vectors for {expected} inputs")]
    CountMismatch { expected: usize, got: usize },
}

/// Finite, non-zero, fixed-length real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, VectorError> {
        if values.is_empty() {
            return Err(VectorError::Empty);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(VectorError::NonFinite);
        }
        if values.iter().all(|v| *v == 0.0) {
            return Err(VectorError::ZeroVector);
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = VectorError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

/// Cosine similarity, clamped to [-1, 1]. Symmetric bit-for-bit.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, VectorError> {
    if a.dim() != b.dim() {
        return Err(VectorError::DimMismatch { left: a.dim(), right: b.dim() });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(VectorError::ZeroVector);
    }
    let dot: f64 = a.0.iter().zip(&b.0).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// `1 - cosine_similarity`, in [0, 2].
pub fn cosine_distance(x: &EmbeddingVector, label: &EmbeddingVector) -> Result<f64, VectorError> {
    Ok(1.0 - cosine_similarity(x, label)?)
}

/// Anything that turns strings into vectors. Implementations must return
/// vectors of one fixed dimension.
pub trait EmbeddingProvider: Send + Sync {
    fn provider_id(&self) -> &str;
    fn model_id(&self) -> &str;
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError>;
}

/// Embed one text.
pub fn embed(provider: &dyn EmbeddingProvider, text: &str) -> Result<EmbeddingVector, EmbedError> {
    if text.trim().is_empty() {
        return Err(EmbedError::EmptyText);
    }
    let mut out = provider.embed_batch(&[text.to_owned()])?;
    match out.len() {
        1 => Ok(out.pop().unwrap()),
        got => Err(EmbedError::CountMismatch { expected: 1, got }),
    }
}

/// Offline embedder: each lowercased alphanumeric token is hashed into one of
/// `dim` buckets and the bucket counts are L2-normalized.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    dim: usize,
    model: String,
}

impl HashEmbedder {
    pub const DEFAULT_DIM: usize = 64;

    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "hash embedder needs a positive dimension");
        Self { dim, model: format!("hash-bag-{dim}") }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed_one(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let mut buckets = vec![0.0f64; self.dim];
        let mut any = false;
        for tok in tokens(trimmed) {
            buckets[(fnv1a64(tok.as_bytes()) % self.dim as u64) as usize] += 1.0;
            any = true;
        }
        if !any {
            // punctuation-only text still gets a stable non-zero vector
            buckets[(fnv1a64(trimmed.as_bytes()) % self.dim as u64) as usize] = 1.0;
        }
        let norm = buckets.iter().map(|v| v * v).sum::<f64>().sqrt();
        buckets.iter_mut().for_each(|v| *v /= norm);
        Ok(EmbeddingVector::new(buckets)?)
    }
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self::new(Self::DEFAULT_DIM)
    }
}

impl EmbeddingProvider for HashEmbedder {
    fn provider_id(&self) -> &str {
        "mock-hash"
    }

    fn model_id(&self) -> &str {
        &self.model
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        texts.iter().map(|t| self.embed_one(t)).collect()
    }
}
