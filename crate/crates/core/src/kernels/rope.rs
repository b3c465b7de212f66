use serde::{Deserialize, Serialize};

use super::KernelError;

pub const DEFAULT_ROPE_BASE: f64 = 10_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RopeConfig {
    pub dim: usize,
    pub base_frequency: f64,
}

impl RopeConfig {
    pub fn new(dim: usize) -> Result<Self, KernelError> {
        Self::with_base(dim, DEFAULT_ROPE_BASE)
    }

    pub fn with_base(dim: usize, base_frequency: f64) -> Result<Self, KernelError> {
        if dim == 0 || !dim.is_multiple_of(2) {
            return Err(KernelError::InvalidConfig(format!(
                "rotary dimension must be even and positive, got {dim}"
            )));
        }
        if !(base_frequency.is_finite() && base_frequency > 0.0) {
            return Err(KernelError::InvalidConfig(format!(
                "base frequency must be positive, got {base_frequency}"
            )));
        }
        Ok(Self { dim, base_frequency })
    }

    /// Angular frequency of pair `i`: `base^(-2i/dim)`.
    pub fn frequency(&self, pair: usize) -> f64 {
        self.base_frequency.powf(-2.0 * pair as f64 / self.dim as f64)
    }
}

/// Rotates every adjacent pair `(x[2i], x[2i+1])` of each vector by
/// `position * frequency(i)`.
pub fn apply_rope(xs: &[Vec<f64>], config: &RopeConfig, positions: &[i64]) -> Result<Vec<Vec<f64>>, KernelError> {
    if xs.len() != positions.len() {
        return Err(KernelError::ShapeMismatch(format!(
            "{} vectors but {} positions",
            xs.len(),
            positions.len()
        )));
    }
    xs.iter()
        .zip(positions)
        .map(|(x, &pos)| {
            if x.len() != config.dim {
                return Err(KernelError::ShapeMismatch(format!(
                    "vector has dimension {}, rotary config expects {}",
                    x.len(),
                    config.dim
                )));
            }
            Ok(x.chunks_exact(2)
                .enumerate()
                .flat_map(|(i, pair)| {
                    let (sin, cos) = (pos as f64 * config.frequency(i)).sin_cos();
                    [pair[0] * cos - pair[1] * sin, pair[0] * sin + pair[1] * cos]
                })
                .collect())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn position_zero_is_identity() {
        let cfg = RopeConfig::new(4).unwrap();
        let x = vec![vec![0.3, -1.2, 4.0, 0.25]];
        assert_eq!(apply_rope(&x, &cfg, &[0]).unwrap(), x);
    }

    #[test]
    fn two_dim_rotation_closed_form() {
        let cfg = RopeConfig::with_base(2, 123.0).unwrap();
        let (x, y) = (0.8, -0.6);
        for p in [-3i64, 1, 2, 7] {
            let out = apply_rope(&[vec![x, y]], &cfg, &[p]).unwrap();
            let a = p as f64;
            assert!((out[0][0] - (x * a.cos() - y * a.sin())).abs() < 1e-12);
            assert!((out[0][1] - (x * a.sin() + y * a.cos())).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(RopeConfig::new(3).is_err());
        assert!(RopeConfig::new(0).is_err());
        assert!(RopeConfig::with_base(2, 0.0).is_err());
        let cfg = RopeConfig::new(2).unwrap();
        assert!(apply_rope(&[vec![1.0, 2.0, 3.0]], &cfg, &[1]).is_err());
        assert!(apply_rope(&[vec![1.0, 2.0]], &cfg, &[1, 2]).is_err());
    }
}
