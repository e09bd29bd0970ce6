//! Unit-vector embeddings shared by icons, screen visuals and text.
//!
//! Everything here is deterministic: seeded vectors come from a ChaCha
//! stream keyed by a domain tag and a seed, and the text encoder hashes
//! tokens into seeded random directions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Default embedding dimension for icons, visuals and text.
pub const DEFAULT_DIM: usize = 16;

/// Allowed deviation of an L2 norm from 1.
pub const UNIT_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbeddingError {
    #[error("vector is not unit-norm (norm = {norm})")]
    NotUnit { norm: f64 },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("cannot normalize a zero vector")]
    ZeroVector,
}

/// A unit-norm vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    /// Wraps `values`, rejecting anything whose norm is not 1 within
    /// [`UNIT_TOLERANCE`].
    pub fn new(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        let norm = l2_norm(&values);
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(EmbeddingError::NotUnit { norm });
        }
        Ok(Self(values))
    }

    pub fn normalized(values: Vec<f64>) -> Result<Self, EmbeddingError> {
        let norm = l2_norm(&values);
        if norm == 0.0 || !norm.is_finite() {
            return Err(EmbeddingError::ZeroVector);
        }
        Ok(Self(values.into_iter().map(|v| v / norm).collect()))
    }

    /// Deterministic pseudo-random unit vector. `domain` separates streams
    /// so that e.g. icon seed 3 and visual seed 3 do not coincide.
    pub fn seeded(domain: &str, seed: u64, dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(domain.as_bytes()) ^ seed.rotate_left(17));
        loop {
            let raw: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            if let Ok(e) = Self::normalized(raw) {
                return e;
            }
        }
    }

    /// Standard basis vector `e_index`.
    pub fn basis(index: usize, dim: usize) -> Self {
        let mut v = vec![0.0; dim];
        v[index] = 1.0;
        Self(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn negated(&self) -> Self {
        Self(self.0.iter().map(|v| -v).collect())
    }

    /// Cosine similarity of two unit vectors, clamped to [-1, 1].
    pub fn similarity(&self, other: &Embedding) -> Result<f64, EmbeddingError> {
        if self.dim() != other.dim() {
            return Err(EmbeddingError::DimensionMismatch {
                left: self.dim(),
                right: other.dim(),
            });
        }
        Ok(dot(&self.0, &other.0).clamp(-1.0, 1.0))
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = EmbeddingError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

/// Cosine similarity for raw slices, checking that both are unit-norm.
pub fn embed_similarity(a: &[f64], b: &[f64]) -> Result<f64, EmbeddingError> {
    for v in [a, b] {
        let norm = l2_norm(v);
        if (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(EmbeddingError::NotUnit { norm });
        }
    }
    if a.len() != b.len() {
        return Err(EmbeddingError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(dot(a, b).clamp(-1.0, 1.0))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

/// Lowercased alphanumeric tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Token-hash bag-of-words encoder: each token maps to a seeded random
/// direction, the bag is summed and normalized. Returns `None` when the
/// text has no tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TextEncoder {
    pub dim: usize,
}

impl Default for TextEncoder {
    fn default() -> Self {
        Self { dim: DEFAULT_DIM }
    }
}

impl TextEncoder {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }

    pub fn encode(&self, text: &str) -> Option<Embedding> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return None;
        }
        let mut acc = vec![0.0; self.dim];
        for token in &tokens {
            let dir = Embedding::seeded("token", fnv1a(token.as_bytes()), self.dim);
            for (a, d) in acc.iter_mut().zip(dir.as_slice()) {
                *a += d;
            }
        }
        // Opposing tokens can cancel exactly only in contrived inputs; fall
        // back to the first token's direction in that case.
        Embedding::normalized(acc).ok().or_else(|| {
            Some(Embedding::seeded(
                "token",
                fnv1a(tokens[0].as_bytes()),
                self.dim,
            ))
        })
    }

    pub fn similarity(&self, a: &str, b: &str) -> f64 {
        match (self.encode(a), self.encode(b)) {
            (Some(x), Some(y)) => x.similarity(&y).unwrap_or(0.0),
            _ => 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn similarity_identity_orthogonal_antipodal() {
        let e1 = Embedding::basis(0, 16);
        let e2 = Embedding::basis(1, 16);
        assert_eq!(e1.similarity(&e1).unwrap(), 1.0);
        assert_eq!(e1.similarity(&e2).unwrap(), 0.0);
        let v = Embedding::seeded("t", 9, 16);
        assert!((v.similarity(&v.negated()).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_unit_rejected() {
        assert!(matches!(
            embed_similarity(&[1.0, 1.0], &[1.0, 0.0]),
            Err(EmbeddingError::NotUnit { .. })
        ));
        assert!(Embedding::new(vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn seeded_vectors_are_unit_and_stable() {
        let a = Embedding::seeded("icon", 4, 16);
        let b = Embedding::seeded("icon", 4, 16);
        let c = Embedding::seeded("visual", 4, 16);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!((l2_norm(a.as_slice()) - 1.0).abs() < UNIT_TOLERANCE);
    }

    #[test]
    fn text_encoder_is_deterministic_and_case_insensitive() {
        let enc = TextEncoder::default();
        assert_eq!(enc.encode("Open DC1"), enc.encode("open dc1"));
        assert!(enc.encode("  ,, ").is_none());
        assert!((enc.similarity("check alerts", "check alerts") - 1.0).abs() < 1e-12);
    }

    #[test]
    fn deserializing_rejects_non_unit() {
        let r: Result<Embedding, _> = serde_json::from_str("[1.0, 1.0]");
        assert!(r.is_err());
    }
}
