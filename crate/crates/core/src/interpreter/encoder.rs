use sha2::{Digest, Sha256};

use super::{EmbeddingVector, InterpreterError};

/// Source of pooled query embeddings for the classification head.
pub trait Encoder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, query: &str) -> Result<EmbeddingVector, InterpreterError>;
}

/// Always returns the same vector.
#[derive(Debug, Clone)]
pub struct FixedEncoder(pub EmbeddingVector);

impl Encoder for FixedEncoder {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn embed(&self, _query: &str) -> Result<EmbeddingVector, InterpreterError> {
        Ok(self.0.clone())
    }
}

/// Signed feature hashing of lowercase word tokens, L2-normalized. Offline
/// stand-in for a pretrained sentence encoder.
#[derive(Debug, Clone)]
pub struct HashingEncoder {
    dim: usize,
}

impl HashingEncoder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "encoder dimension must be positive");
        Self { dim }
    }
}

impl Encoder for HashingEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, query: &str) -> Result<EmbeddingVector, InterpreterError> {
        let mut values = vec![0.0; self.dim];
        let lowered = query.to_lowercase();
        for token in lowered
            .split(|c: char| !c.is_alphanumeric() && c != '_')
            .filter(|t| !t.is_empty())
        {
            let h = Sha256::digest(token.as_bytes());
            let idx = u64::from_le_bytes(h[..8].try_into().unwrap()) as usize % self.dim;
            let sign = if h[8] & 1 == 0 { 1.0 } else { -1.0 };
            values[idx] += sign;
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        EmbeddingVector::new(values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hashing_is_deterministic_and_normalized() {
        let enc = HashingEncoder::new(16);
        let a = enc.embed("Average budget by genre").unwrap();
        let b = enc.embed("average BUDGET by genre").unwrap();
        assert_eq!(a, b);
        let norm: f64 = a.0.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(enc.embed("").unwrap().0.iter().all(|v| *v == 0.0));
    }
}
