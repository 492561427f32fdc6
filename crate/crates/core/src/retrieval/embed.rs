use serde::{Deserialize, Serialize};
use xxhash_rust::xxh64::xxh64;

use crate::error::{Error, Result};

pub const DEFAULT_DIM: usize = 256;

/// Fixed seed for token hashing. Changing it changes every stored vector.
pub const HASH_SEED: u64 = 0x6c61_6e64_7269_736b;

/// An L2-normalized vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Normalize `values`; a zero vector is rejected.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::arg("cannot normalize a zero or non-finite vector"));
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Ok(Embedding(values))
    }

    /// Wrap a vector that is already unit length (within 1e-6).
    pub fn from_unit(values: Vec<f64>) -> Result<Self> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::arg(format!("embedding norm {norm} is not 1")));
        }
        Ok(Embedding(values))
    }

    /// Unit basis vector `e_index`.
    pub fn basis(dim: usize, index: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[index] = 1.0;
        Embedding(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Neg for Embedding {
    type Output = Embedding;

    fn neg(self) -> Embedding {
        Embedding(self.0.into_iter().map(|v| -v).collect())
    }
}

/// Anything that turns text into a unit vector of fixed dimension.
pub trait EmbeddingProvider {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Embedding;
}

/// Signed feature hashing over lowercase word tokens.
///
/// Each token is hashed with XXH64 under [`HASH_SEED`]; the low bits pick the
/// bucket and the top bit picks the sign. Counts accumulate and the result is
/// L2-normalized. Text without tokens (or whose counts cancel exactly) maps to
/// `e_0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashingEmbedder {
    dim: usize,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::arg("embedding dimension must be at least 1"));
        }
        Ok(HashingEmbedder { dim })
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        HashingEmbedder { dim: DEFAULT_DIM }
    }
}

/// Lowercase alphanumeric runs.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

impl EmbeddingProvider for HashingEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Embedding {
        let mut v = vec![0.0; self.dim];
        for token in tokenize(text) {
            let h = xxh64(token.as_bytes(), HASH_SEED);
            let bucket = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
        Embedding::normalized(v).unwrap_or_else(|_| Embedding::basis(self.dim, 0))
    }
}

/// Convenience wrapper around the default provider.
pub fn embed_text(text: &str) -> Embedding {
    HashingEmbedder::default().embed(text)
}

/// Dot product of unit vectors, clamped to `[-1, 1]`.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    cosine_slices(a.as_slice(), b.as_slice())
}

pub(crate) fn cosine_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::arg(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok(dot.clamp(-1.0, 1.0))
}
