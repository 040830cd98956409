//! Unit-normalized embeddings and cosine similarity.
//!
//! Storage is `f32`; every reduction accumulates in `f64`.

use crate::error::{Error, Result};

/// A unit-L2-norm embedding for a query or a candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    values: Vec<f32>,
}

impl EmbeddingVector {
    #[inline]
    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.values
    }

    /// Values promoted to `f64`.
    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }
}

impl AsRef<[f32]> for EmbeddingVector {
    fn as_ref(&self) -> &[f32] {
        &self.values
    }
}

pub fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

/// Scales `v` to unit length.
pub fn normalize(v: &[f32]) -> Result<EmbeddingVector> {
    let norm = l2_norm(v);
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroNorm);
    }
    Ok(EmbeddingVector {
        values: v.iter().map(|&x| (x as f64 / norm) as f32).collect(),
    })
}

/// Same as [`normalize`] for an `f64` input.
pub fn normalize_f64(v: &[f64]) -> Result<EmbeddingVector> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroNorm);
    }
    Ok(EmbeddingVector {
        values: v.iter().map(|&x| (x / norm) as f32).collect(),
    })
}

/// Dot product of two `f32` slices, accumulated in index order in `f64`.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| x as f64 * y as f64)
        .sum()
}

/// Cosine similarity of two unit vectors, clamped to `[-1, 1]`.
pub fn cosine(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            expected: u.dim(),
            found: v.dim(),
        });
    }
    Ok(dot(&u.values, &v.values).clamp(-1.0, 1.0))
}
