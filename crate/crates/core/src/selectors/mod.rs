//! Selector families, the default census and the round-based vote
//! protocol.
//!
//! Base selectors vote from the current state and the history; product
//! selectors combine two base votes once those are frozen.

mod eval;
mod votes;

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{FEATURE_COUNT, FEATURE_NAMES};
use crate::operators::OperatorCatalog;
use crate::seed;
use crate::vote::{VoteDistribution, VoteMatrix};

pub use eval::{EcdfRefresh, NeighborIndex, SelectorBank, VoteContext};
pub use votes::*;

pub const ALPHA_TIGHT: f64 = 0.811;
pub const ALPHA_WIDE: f64 = 0.896;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SelectorError {
    #[error("operator {0} is not selectable")]
    NotSelectable(usize),
    #[error("vote lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("voting round {round} produced no votes; {pending} selectors still waiting")]
    DeadlockDetected { round: usize, pending: usize },
    #[error("selector {0} depends on unknown selector {1}")]
    UnknownDependency(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Featurization {
    Standardize,
    Ecdf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SelectorKind {
    Uniform,
    /// `operator` is a selectable index.
    Dirac { operator: usize },
    Applicability { operators: Vec<usize> },
    SingleFeature { field: usize, alpha: f64 },
    RandomProjection {
        direction: usize,
        featurization: Featurization,
        alpha: f64,
    },
    Knn { field: usize, z: usize },
    Product { left: usize, right: usize },
}

impl SelectorKind {
    pub fn depends_on(&self) -> Vec<usize> {
        match self {
            SelectorKind::Product { left, right } => vec![*left, *right],
            _ => Vec::new(),
        }
    }

    pub fn is_history_informed(&self) -> bool {
        matches!(
            self,
            SelectorKind::SingleFeature { .. } | SelectorKind::RandomProjection { .. } | SelectorKind::Knn { .. }
        )
    }

    pub fn family(&self) -> &'static str {
        match self {
            SelectorKind::Uniform => "uniform",
            SelectorKind::Dirac { .. } => "dirac",
            SelectorKind::Applicability { .. } => "applicability",
            SelectorKind::SingleFeature { .. } => "single_feature",
            SelectorKind::RandomProjection { .. } => "random_projection",
            SelectorKind::Knn { .. } => "knn",
            SelectorKind::Product { .. } => "product",
        }
    }
}

impl fmt::Display for SelectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectorKind::Uniform => write!(f, "uniform"),
            SelectorKind::Dirac { operator } => write!(f, "dirac({operator})"),
            SelectorKind::Applicability { operators } => write!(f, "applicability({operators:?})"),
            SelectorKind::SingleFeature { field, alpha } => {
                write!(f, "single_feature({}, {alpha})", FEATURE_NAMES[*field])
            }
            SelectorKind::RandomProjection {
                direction,
                featurization,
                alpha,
            } => write!(f, "random_projection({direction}, {featurization:?}, {alpha})"),
            SelectorKind::Knn { field, z } => write!(f, "knn({}, {z})", FEATURE_NAMES[*field]),
            SelectorKind::Product { left, right } => write!(f, "product({left}, {right})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorSpec {
    pub id: usize,
    pub kind: SelectorKind,
    pub depends_on: Vec<usize>,
}

impl SelectorSpec {
    pub fn new(id: usize, kind: SelectorKind) -> Self {
        let depends_on = kind.depends_on();
        Self { id, kind, depends_on }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectorConfig {
    pub alphas: Vec<f64>,
    pub projection_count: usize,
    /// Alpha shared by both halves of a single-feature product.
    pub product_alpha: f64,
    pub products: bool,
    /// KNN neighbourhood sizes; empty disables the family.
    pub knn_z: Vec<usize>,
    /// Only the nearest `rank_cutoff` neighbours enter a history vote;
    /// `0` keeps all of them.
    pub rank_cutoff: usize,
    pub ecdf_refresh: EcdfRefresh,
    /// Evaluate distance rankings on the rayon pool.
    pub parallel: bool,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            alphas: vec![ALPHA_TIGHT, ALPHA_WIDE],
            projection_count: 8,
            product_alpha: ALPHA_TIGHT,
            products: true,
            knn_z: Vec::new(),
            rank_cutoff: 384,
            ecdf_refresh: EcdfRefresh::default(),
            parallel: false,
        }
    }
}

/// Random directions with components uniform on `[0, 1]`, scaled to unit
/// Euclidean norm.
pub fn projection_directions(count: usize, master_seed: u64) -> Vec<[f64; FEATURE_COUNT]> {
    let mut rng = seed::rng(&[seed::tag::PROJECTION, master_seed]);
    (0..count)
        .map(|_| {
            let mut u = [0.0; FEATURE_COUNT];
            for c in &mut u {
                *c = rng.random::<f64>();
            }
            let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt();
            for c in &mut u {
                *c /= norm;
            }
            u
        })
        .collect()
}

/// Builds the selector list in id order: uniform, dirac, applicability,
/// single-feature, random-projection, products, then KNN.
pub fn build_census(catalog: &OperatorCatalog, cfg: &SelectorConfig) -> Vec<SelectorSpec> {
    let k = catalog.selectable_count();
    let mut kinds = vec![SelectorKind::Uniform];
    kinds.extend((0..k).map(|operator| SelectorKind::Dirac { operator }));
    let applicability_start = kinds.len();
    kinds.extend(
        catalog
            .predicate_operators()
            .into_iter()
            .map(|op| SelectorKind::Applicability { operators: vec![op] }),
    );
    let applicability: Vec<usize> = (applicability_start..kinds.len()).collect();

    let history_start = kinds.len();
    for field in 0..FEATURE_COUNT {
        for &alpha in &cfg.alphas {
            kinds.push(SelectorKind::SingleFeature { field, alpha });
        }
    }
    for direction in 0..cfg.projection_count {
        for featurization in [Featurization::Standardize, Featurization::Ecdf] {
            for &alpha in &cfg.alphas {
                kinds.push(SelectorKind::RandomProjection {
                    direction,
                    featurization,
                    alpha,
                });
            }
        }
    }
    let history: Vec<usize> = (history_start..kinds.len()).collect();

    if cfg.products {
        let tight: Vec<usize> = history
            .iter()
            .copied()
            .filter(|&i| matches!(kinds[i], SelectorKind::SingleFeature { alpha, .. } if alpha == cfg.product_alpha))
            .collect();
        for (a, &left) in tight.iter().enumerate() {
            for &right in &tight[a + 1..] {
                kinds.push(SelectorKind::Product { left, right });
            }
        }
        for &left in &history {
            for &right in &applicability {
                kinds.push(SelectorKind::Product { left, right });
            }
        }
    }
    for field in 0..FEATURE_COUNT {
        for &z in &cfg.knn_z {
            kinds.push(SelectorKind::Knn { field, z });
        }
    }
    kinds
        .into_iter()
        .enumerate()
        .map(|(id, kind)| SelectorSpec::new(id, kind))
        .collect()
}

/// Votes cast by every selector plus the number of rounds needed.
#[derive(Debug, Clone, PartialEq)]
pub struct VoteOutcome {
    pub votes: VoteMatrix,
    pub rounds: usize,
}

/// Runs rounds until every selector has voted. In each round every
/// selector whose dependencies voted in earlier rounds casts its vote;
/// `base` evaluates a batch of dependency-free selectors, products are
/// computed from the frozen rows of their dependencies.
pub fn run_voting_rounds(
    specs: &[SelectorSpec],
    k: usize,
    mut base: impl FnMut(&[&SelectorSpec]) -> Result<Vec<VoteDistribution>, SelectorError>,
) -> Result<VoteOutcome, SelectorError> {
    for s in specs {
        if let Some(&d) = s.depends_on.iter().find(|&&d| d >= specs.len()) {
            return Err(SelectorError::UnknownDependency(s.id, d));
        }
    }
    let mut votes = VoteMatrix::with_rows(specs.len(), k);
    let mut voted = vec![false; specs.len()];
    let mut pending = specs.len();
    let mut rounds = 0;
    while pending > 0 {
        let ready: Vec<usize> = (0..specs.len())
            .filter(|&i| !voted[i] && specs[i].depends_on.iter().all(|&d| voted[d]))
            .collect();
        if ready.is_empty() {
            return Err(SelectorError::DeadlockDetected { round: rounds + 1, pending });
        }
        let (derived, plain): (Vec<usize>, Vec<usize>) =
            ready.iter().partition(|&&i| !specs[i].depends_on.is_empty());
        let batch: Vec<&SelectorSpec> = plain.iter().map(|&i| &specs[i]).collect();
        let cast = if batch.is_empty() { Vec::new() } else { base(&batch)? };
        let mut fresh: Vec<(usize, VoteDistribution)> = plain.into_iter().zip(cast).collect();
        for i in derived {
            let deps = &specs[i].depends_on;
            let v = match deps.as_slice() {
                [a, b] => product_vote(votes.row(*a), votes.row(*b))?,
                [a] => VoteDistribution::from_masses(votes.row(*a).to_vec()),
                _ => {
                    let mut acc = VoteDistribution::uniform(k);
                    for &d in deps {
                        acc = product_vote(acc.masses(), votes.row(d))?;
                    }
                    acc
                }
            };
            fresh.push((i, v));
        }
        // Rows become visible only after the whole round has voted.
        for (i, v) in fresh {
            votes.set_row(i, v.masses());
            voted[i] = true;
            pending -= 1;
        }
        rounds += 1;
    }
    Ok(VoteOutcome { votes, rounds })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn census() -> Vec<SelectorSpec> {
        build_census(&OperatorCatalog::build(), &SelectorConfig::default())
    }

    #[test]
    fn default_census_counts() {
        let specs = census();
        let count = |f: &str| specs.iter().filter(|s| s.kind.family() == f).count();
        assert_eq!(count("uniform"), 1);
        assert_eq!(count("dirac"), 22);
        assert_eq!(count("applicability"), 4);
        assert_eq!(count("single_feature"), 56);
        assert_eq!(count("random_projection"), 32);
        assert_eq!(count("product"), 730);
        assert_eq!(count("knn"), 0);
        assert_eq!(specs.len(), 845);
        for (i, s) in specs.iter().enumerate() {
            assert_eq!(s.id, i);
            for &d in &s.depends_on {
                assert!(d < s.id);
                assert!(specs[d].depends_on.is_empty(), "products only wrap base selectors");
            }
        }
    }

    #[test]
    fn knn_flag_adds_selectors() {
        let cfg = SelectorConfig {
            knn_z: vec![5, 10],
            ..SelectorConfig::default()
        };
        let specs = build_census(&OperatorCatalog::build(), &cfg);
        assert_eq!(specs.len(), 845 + 56);
    }

    #[test]
    fn directions_are_unit_and_nonnegative() {
        let d = projection_directions(8, 42);
        assert_eq!(d.len(), 8);
        for u in &d {
            let n: f64 = u.iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-12);
            assert!(u.iter().all(|&x| x >= 0.0));
        }
        assert_eq!(d, projection_directions(8, 42));
        assert_ne!(d, projection_directions(8, 43));
    }

    fn base_uniform(batch: &[&SelectorSpec]) -> Result<Vec<VoteDistribution>, SelectorError> {
        Ok(batch
            .iter()
            .map(|s| match s.kind {
                SelectorKind::Dirac { operator } => VoteDistribution::dirac(operator, 3),
                _ => VoteDistribution::uniform(3),
            })
            .collect())
    }

    #[test]
    fn rounds_base_only_and_with_products() {
        let base = vec![
            SelectorSpec::new(0, SelectorKind::Uniform),
            SelectorSpec::new(1, SelectorKind::Dirac { operator: 2 }),
        ];
        let out = run_voting_rounds(&base, 3, base_uniform).unwrap();
        assert_eq!(out.rounds, 1);
        let mut with_products = base.clone();
        with_products.push(SelectorSpec::new(2, SelectorKind::Product { left: 0, right: 1 }));
        let out = run_voting_rounds(&with_products, 3, base_uniform).unwrap();
        assert_eq!(out.rounds, 2);
        assert_eq!(out.votes.row(2), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn cyclic_specs_deadlock() {
        let specs = vec![
            SelectorSpec::new(0, SelectorKind::Uniform),
            SelectorSpec::new(1, SelectorKind::Product { left: 0, right: 2 }),
            SelectorSpec::new(2, SelectorKind::Product { left: 1, right: 0 }),
        ];
        let err = run_voting_rounds(&specs, 3, base_uniform).unwrap_err();
        assert_eq!(err, SelectorError::DeadlockDetected { round: 2, pending: 2 });
    }
}
