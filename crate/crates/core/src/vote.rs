//! Vote distributions over the selectable operators.

use serde::{Deserialize, Serialize};

pub const MASS_TOLERANCE: f64 = 1e-9;

/// A normalized mass function over selectable operator indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VoteDistribution(Vec<f64>);

impl VoteDistribution {
    pub fn uniform(k: usize) -> Self {
        assert!(k >= 1, "vote over an empty operator set");
        Self(vec![1.0 / k as f64; k])
    }

    pub fn dirac(index: usize, k: usize) -> Self {
        assert!(index < k, "dirac index {index} out of range for {k} operators");
        let mut m = vec![0.0; k];
        m[index] = 1.0;
        Self(m)
    }

    /// Normalizes nonnegative `raw`; all-zero (or empty-support) input
    /// becomes uniform.
    pub fn normalize(raw: Vec<f64>) -> Self {
        debug_assert!(raw.iter().all(|&m| m >= 0.0));
        let total: f64 = raw.iter().sum();
        if total > 0.0 && total.is_finite() {
            Self(raw.into_iter().map(|m| m / total).collect())
        } else {
            Self::uniform(raw.len())
        }
    }

    /// Takes masses as-is; callers guarantee normalization.
    pub fn from_masses(masses: Vec<f64>) -> Self {
        Self(masses)
    }

    pub fn masses(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_valid(&self) -> bool {
        let sum: f64 = self.0.iter().sum();
        self.0.iter().all(|&m| m >= 0.0 && m.is_finite()) && (sum - 1.0).abs() <= MASS_TOLERANCE
    }

    pub fn entropy(&self) -> f64 {
        crate::stats::entropy(&self.0)
    }
}

/// Row-major matrix of votes: one row per selector, one column per
/// selectable operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteMatrix {
    cols: usize,
    data: Vec<f64>,
}

impl VoteMatrix {
    pub fn new(cols: usize) -> Self {
        Self {
            cols,
            data: Vec::new(),
        }
    }

    pub fn with_rows(rows: usize, cols: usize) -> Self {
        Self {
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.cols);
        self.data.extend_from_slice(row);
    }

    pub fn set_row(&mut self, i: usize, row: &[f64]) {
        assert_eq!(row.len(), self.cols);
        self.data[i * self.cols..(i + 1) * self.cols].copy_from_slice(row);
    }

    pub fn rows(&self) -> usize {
        self.data.len().checked_div(self.cols).unwrap_or(0)
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }
}
