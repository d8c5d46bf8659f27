//! Vote aggregation and the final operator choice.
//!
//! Selector votes are combined by a signed weighted sum, shifted so the
//! most negative entry becomes zero, and renormalized. The result is read
//! by a UCB rule as if each entry were an operator's success rate.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::env::SurrogateState;
use crate::vote::{VoteDistribution, VoteMatrix};

/// Guard below which the aggregation denominator is treated as zero.
pub const DENOMINATOR_EPS: f64 = 1e-12;

pub const INITIAL_WEIGHT: f64 = 1.0;

/// Signed per-selector weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SelectorWeights(Vec<f64>);

impl SelectorWeights {
    pub fn new(w: Vec<f64>) -> Self {
        Self(w)
    }

    pub fn initial(count: usize) -> Self {
        Self(vec![INITIAL_WEIGHT; count])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for SelectorWeights {
    type Target = Vec<f64>;
    fn deref(&self) -> &Vec<f64> {
        &self.0
    }
}

impl DerefMut for SelectorWeights {
    fn deref_mut(&mut self) -> &mut Vec<f64> {
        &mut self.0
    }
}

/// Serde helper storing `+inf` as `null` (JSON has no infinities).
pub mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let mapped: Vec<Option<f64>> = v
            .iter()
            .map(|&x| if x.is_finite() { Some(x) } else { None })
            .collect();
        mapped.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(raw.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect())
    }
}

/// Everything the final choice looked at, for logging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTrace {
    pub d_samp: VoteDistribution,
    #[serde(with = "inf_as_null")]
    pub ucb_indices: Vec<f64>,
    /// Selectable-operator index.
    pub chosen: usize,
    pub fell_back: bool,
    pub entropy: f64,
}

/// Weighted sum of votes, shifted by its most negative entry and normalized.
///
/// Falls back to uniform when the shifted mass is (numerically) zero.
// The negated comparison also catches NaN.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn aggregate_votes(votes: &VoteMatrix, weights: &[f64]) -> VoteDistribution {
    assert_eq!(votes.rows(), weights.len(), "one weight per selector");
    let k = votes.cols();
    let mut summed = vec![0.0; k];
    for (i, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for (acc, &v) in summed.iter_mut().zip(votes.row(i)) {
            *acc += w * v;
        }
    }
    let shift = summed.iter().copied().fold(0.0, f64::min);
    let denom: f64 = summed.iter().map(|d| d - shift).sum();
    if !(denom > DENOMINATOR_EPS) || !denom.is_finite() {
        return VoteDistribution::uniform(k);
    }
    VoteDistribution::from_masses(summed.iter().map(|d| (d - shift) / denom).collect())
}

/// UCB indices `d_i + sqrt(2 ln(1 + t) / n_i)`, infinite for untried operators.
pub fn ucb_indices(d: &VoteDistribution, use_counts: &[u64]) -> Vec<f64> {
    assert_eq!(d.len(), use_counts.len());
    let total: u64 = use_counts.iter().sum();
    let log_term = 2.0 * (1.0 + total as f64).ln();
    d.masses()
        .iter()
        .zip(use_counts)
        .map(|(&m, &n)| {
            if n == 0 {
                f64::INFINITY
            } else {
                m + (log_term / n as f64).sqrt()
            }
        })
        .collect()
}

/// Index of the first maximum; lowest index wins ties (including among
/// infinite entries).
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Selectable-operator index with the largest UCB index.
pub fn choose_operator(d: &VoteDistribution, use_counts: &[u64]) -> usize {
    argmax_lowest(&ucb_indices(d, use_counts))
}

/// Successor for an inapplicable operator: same parameters and description,
/// next timestep.
pub fn fallback_state(prev: &SurrogateState) -> SurrogateState {
    SurrogateState {
        timestep: prev.timestep + 1,
        ..prev.clone()
    }
}
