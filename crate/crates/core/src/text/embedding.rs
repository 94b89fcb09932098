use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite, L2-normalized vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub const NORM_TOLERANCE: f64 = 1e-6;

    /// Scales `values` to unit length. Fails on zero or non-finite input.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("embedding", "non-finite entry"));
        }
        let norm = dot(&values, &values).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::invalid("embedding", "cannot normalize a zero vector"));
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Ok(Embedding(values))
    }

    /// Wraps values that are already unit-norm.
    pub fn from_unit(values: Vec<f64>) -> Result<Self> {
        let norm = dot(&values, &values).sqrt();
        if values.iter().any(|v| !v.is_finite()) || (norm - 1.0).abs() > Self::NORM_TOLERANCE {
            return Err(Error::invalid("embedding", format!("expected unit norm, got {norm}")));
        }
        Ok(Embedding(values))
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

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }

    /// Cosine similarity; both sides are unit-norm so this is a dot product.
    pub fn cosine(&self, other: &Embedding) -> f64 {
        dot(&self.0, &other.0)
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
