//! Token salience as feature-affinity centrality.
//!
//! The affinity `A = X Xᵀ` of the patch tokens is softmax-normalized per row
//! and summed per column: token `i` is salient when many other tokens put
//! their affinity mass on it. Scores are then min-max normalized to `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::numeric::{dot, softmax_f64, Matrix};

/// Spread below which min-max normalization treats every token as equally
/// salient.
pub const DEGENERATE_SPREAD: f64 = 1e-9;

/// Which salience vector drives matching and aggregation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SalienceSource {
    #[default]
    Normalized,
    Raw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SalienceVector {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl SalienceVector {
    pub fn from_tokens(x: &Matrix) -> Self {
        let raw = compute_salience(x);
        let normalized = minmax_normalize(&raw);
        Self { raw, normalized }
    }

    /// All-ones salience, the state of a freshly embedded sequence before any
    /// layer has scored it.
    pub fn uniform(n: usize) -> Self {
        Self {
            raw: vec![1.0; n],
            normalized: vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn weights(&self, source: SalienceSource) -> &[f64] {
        match source {
            SalienceSource::Normalized => &self.normalized,
            SalienceSource::Raw => &self.raw,
        }
    }

    /// Total raw mass; equals the token count for a row-stochastic affinity.
    pub fn mass(&self) -> f64 {
        self.raw.iter().sum()
    }
}

/// Column sums of `row_softmax(x xᵀ)`. Every entry is strictly positive and
/// the entries sum to `x.rows()`.
pub fn compute_salience(x: &Matrix) -> Vec<f64> {
    let n = x.rows();
    let mut affinity = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i..n {
            let v = dot(x.row(i), x.row(j));
            affinity[i * n + j] = v;
            affinity[j * n + i] = v;
        }
    }
    let mut salience = vec![0.0f64; n];
    for row in affinity.chunks_exact(n.max(1)).take(n) {
        for (s, p) in salience.iter_mut().zip(softmax_f64(row)) {
            *s += p;
        }
    }
    salience
}

/// Rescales to `[0, 1]`. A degenerate (constant) input maps to all ones so
/// that weighted scoring falls back to plain cosine matching instead of
/// zeroing every score.
pub fn minmax_normalize(raw: &[f64]) -> Vec<f64> {
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let spread = max - min;
    if spread.is_nan() || spread < DEGENERATE_SPREAD {
        return vec![1.0; raw.len()];
    }
    raw.iter()
        .map(|v| ((v - min) / spread).clamp(0.0, 1.0))
        .collect()
}
