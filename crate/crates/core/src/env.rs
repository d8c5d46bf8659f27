//! Surrogate description environment.
//!
//! A seeded generative model standing in for the description generator of
//! an abstract-interpretation backend. It maps a [`StateParams`] bundle to
//! the statistics a real description would have (box counts, named
//! predicate usage, coverage volumes) and to the 28-field feature vector
//! the selectors read. The model is monotone in the parameters that
//! control abstraction, so operators have consistent observable effects.
//!
//! Generation is a pure function of `(params, config)`: the only entropy
//! comes from `params.noise_draw` folded with `config.master_seed`.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::seed;
use crate::stats::summarize;

pub const FEATURE_COUNT: usize = 28;
pub const CRITERIA_COUNT: usize = 5;

pub const MIN_DEPTH: u8 = 1;
pub const MAX_DEPTH: u8 = 6;
pub const MIN_SAMPLING_RADIUS: f64 = 0.1;
pub const MAX_SAMPLING_RADIUS: f64 = 2.0;
pub const MAX_MERGE_ITERS: u8 = 3;
pub const MERGE_PRECISIONS: [f64; 3] = [1e-6, 1e-4, 1e-2];
pub const MAX_INPUT_DIMS: u32 = 6;

/// Upper bound on the number of box volumes materialized per description.
/// Larger descriptions keep an evenly weighted sample of this size, each
/// entry standing for `n_boxes / BOX_SAMPLE_CAP` boxes.
pub const BOX_SAMPLE_CAP: usize = 128;

/// 0-based feature indices of the five autouser criteria, in criterion order:
/// named-predicate volume, box-range volume, unique named predicates,
/// conjunct count, box-range predicate count.
pub const CRITERIA_FEATURES: [usize; CRITERIA_COUNT] = [22, 24, 17, 19, 21];

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "box_volume_min",
    "box_volume_max",
    "box_volume_mean",
    "box_volume_median",
    "box_volume_std",
    "box_volume_total",
    "box_volume_q1",
    "box_volume_q3",
    "side_sum_min",
    "side_sum_max",
    "side_sum_mean",
    "side_sum_median",
    "side_sum_std",
    "side_sum_total",
    "side_sum_q1",
    "side_sum_q3",
    "log_box_fraction",
    "unique_named",
    "named_occurrences",
    "conjunct_count",
    "disjunct_count",
    "box_range_count",
    "vol_named_total",
    "vol_named_unique",
    "vol_box_total",
    "vol_box_unique",
    "vol_conjunct_total",
    "vol_conjunct_unique",
];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EnvError {
    #[error("question_dims ({question}) must be in 1..=input_dims ({input})")]
    QuestionDims { question: u32, input: u32 },
    #[error("input_dims must be in 1..={MAX_INPUT_DIMS}, got {0}")]
    InputDims(u32),
    #[error("predicate catalog is empty")]
    EmptyCatalog,
    #[error("duplicate predicate id {0:?}")]
    DuplicatePredicate(String),
    #[error("predicate {id:?} has abstraction level {level} outside [0, 1]")]
    PredicateLevel { id: String, level: f64 },
    #[error("state parameter {field} out of range: {value}")]
    ParamRange { field: &'static str, value: String },
    #[error("disallowed predicate {0:?} is not in the catalog")]
    UnknownPredicate(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedPredicateSpec {
    pub id: String,
    pub abstraction_level: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub input_dims: u32,
    pub question_dims: u32,
    pub predicate_catalog: Vec<NamedPredicateSpec>,
    pub master_seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            input_dims: 4,
            question_dims: 2,
            predicate_catalog: default_catalog(12),
            master_seed: 42,
        }
    }
}

/// `count` predicates `p00, p01, ...` with evenly spaced abstraction levels.
pub fn default_catalog(count: usize) -> Vec<NamedPredicateSpec> {
    (0..count)
        .map(|i| NamedPredicateSpec {
            id: format!("p{i:02}"),
            abstraction_level: (i as f64 + 0.5) / count as f64,
        })
        .collect()
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.input_dims == 0 || self.input_dims > MAX_INPUT_DIMS {
            return Err(EnvError::InputDims(self.input_dims));
        }
        if self.question_dims == 0 || self.question_dims > self.input_dims {
            return Err(EnvError::QuestionDims {
                question: self.question_dims,
                input: self.input_dims,
            });
        }
        if self.predicate_catalog.is_empty() {
            return Err(EnvError::EmptyCatalog);
        }
        let mut seen = BTreeSet::new();
        for p in &self.predicate_catalog {
            if !seen.insert(p.id.as_str()) {
                return Err(EnvError::DuplicatePredicate(p.id.clone()));
            }
            if !(0.0..=1.0).contains(&p.abstraction_level) {
                return Err(EnvError::PredicateLevel {
                    id: p.id.clone(),
                    level: p.abstraction_level,
                });
            }
        }
        Ok(())
    }

    pub fn predicate_index(&self, id: &str) -> Option<usize> {
        self.predicate_catalog.iter().position(|p| p.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateParams {
    /// Refinement depth `E`; boxes stop splitting at side length `3^-E`.
    pub refinement_depth: u8,
    pub sampling_radius: f64,
    pub reuse_reach: bool,
    pub split_question_vars_only: bool,
    pub merge_iters: u8,
    pub merge_precision: f64,
    pub produce_greater_abstraction: bool,
    pub disallowed_predicates: BTreeSet<String>,
    pub noise_draw: u64,
}

impl Default for StateParams {
    fn default() -> Self {
        Self {
            refinement_depth: 3,
            sampling_radius: 1.0,
            reuse_reach: false,
            split_question_vars_only: false,
            merge_iters: 0,
            merge_precision: 1e-4,
            produce_greater_abstraction: false,
            disallowed_predicates: BTreeSet::new(),
            noise_draw: 0,
        }
    }
}

impl StateParams {
    pub fn validate(&self, cfg: &EnvConfig) -> Result<(), EnvError> {
        if !(MIN_DEPTH..=MAX_DEPTH).contains(&self.refinement_depth) {
            return Err(EnvError::ParamRange {
                field: "refinement_depth",
                value: self.refinement_depth.to_string(),
            });
        }
        if !(MIN_SAMPLING_RADIUS..=MAX_SAMPLING_RADIUS).contains(&self.sampling_radius) {
            return Err(EnvError::ParamRange {
                field: "sampling_radius",
                value: self.sampling_radius.to_string(),
            });
        }
        if self.merge_iters > MAX_MERGE_ITERS {
            return Err(EnvError::ParamRange {
                field: "merge_iters",
                value: self.merge_iters.to_string(),
            });
        }
        if !MERGE_PRECISIONS.contains(&self.merge_precision) {
            return Err(EnvError::ParamRange {
                field: "merge_precision",
                value: self.merge_precision.to_string(),
            });
        }
        if let Some(id) = self
            .disallowed_predicates
            .iter()
            .find(|id| cfg.predicate_index(id).is_none())
        {
            return Err(EnvError::UnknownPredicate(id.clone()));
        }
        Ok(())
    }

    /// Number of axes eligible for splitting.
    pub fn effective_dims(&self, cfg: &EnvConfig) -> u32 {
        if self.split_question_vars_only {
            cfg.question_dims
        } else {
            cfg.input_dims
        }
    }

    /// Abstraction score in `[0, 1]`; higher means a more abstract description.
    pub fn abstraction_score(&self) -> f64 {
        let raw = 0.15 * (6.0 - f64::from(self.refinement_depth))
            + if self.produce_greater_abstraction { 0.25 } else { 0.0 }
            + 0.1 * (self.sampling_radius - 1.0)
            + 0.05 * f64::from(self.merge_iters);
        raw.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionStats {
    pub n_boxes: u64,
    pub unique_named: u32,
    pub named_occurrences: u32,
    pub box_range_count: u32,
    pub disjunct_count: u32,
    pub conjunct_count: u32,
    pub vol_named_total: f64,
    pub vol_named_unique: f64,
    pub vol_box_total: f64,
    pub vol_box_unique: f64,
    pub vol_conjunct_total: f64,
    pub vol_conjunct_unique: f64,
    /// Normalized volume covered by all boxes together.
    pub box_coverage: f64,
    /// Scaled box volumes; exact when `n_boxes <= BOX_SAMPLE_CAP`, otherwise
    /// an evenly weighted sample (see [`DescriptionStats::box_multiplicity`]).
    pub box_volumes: Vec<f64>,
    pub box_side_sums: Vec<f64>,
    pub named_multiset: BTreeMap<String, u32>,
    pub fingerprint: String,
}

impl DescriptionStats {
    /// How many boxes each entry of `box_volumes` stands for.
    pub fn box_multiplicity(&self) -> f64 {
        self.n_boxes as f64 / self.box_volumes.len() as f64
    }

    /// Occurrence count of a named predicate in the description.
    pub fn occurrences(&self, id: &str) -> u32 {
        self.named_multiset.get(id).copied().unwrap_or(0)
    }
}

/// Product of the first `count` split factors. Each factor is 2 or 3.
pub fn raw_box_count(factors: &[u8], count: usize) -> u64 {
    factors[..count].iter().map(|&f| u64::from(f)).product()
}

/// Fills in a description for `params`. Total on valid parameters.
pub fn generate_description(params: &StateParams, cfg: &EnvConfig) -> DescriptionStats {
    let mut rng = seed::rng(&[seed::tag::DESCRIPTION, cfg.master_seed, params.noise_draw]);

    // Factors for every possible (axis, depth) split are drawn up front so
    // the prefix used at smaller depth/width is shared with larger ones.
    let max_factors = (cfg.input_dims * u32::from(MAX_DEPTH)) as usize;
    let factors: Vec<u8> = (0..max_factors)
        .map(|_| if rng.random_bool(0.5) { 3 } else { 2 })
        .collect();
    let eta: i64 = rng.random_range(-1..=1);
    let eta_cov: i64 = rng.random_range(-1..=1);

    let d_eff = params.effective_dims(cfg);
    let depth = u32::from(params.refinement_depth);
    let n0 = raw_box_count(&factors, (d_eff * depth) as usize);
    let merged = (n0 as f64 * (1.0 - 0.08 * f64::from(params.merge_iters))).round();
    let n_boxes = (merged as u64).max(1);

    let a = params.abstraction_score();
    let band = 0.2 + 0.1 * params.sampling_radius;
    let mut support: Vec<&NamedPredicateSpec> = cfg
        .predicate_catalog
        .iter()
        .filter(|p| !params.disallowed_predicates.contains(&p.id))
        .filter(|p| (p.abstraction_level - a).abs() <= band)
        .collect();
    support.sort_by(|x, y| {
        (x.abstraction_level - a)
            .abs()
            .total_cmp(&(y.abstraction_level - a).abs())
            .then_with(|| x.id.cmp(&y.id))
    });
    let unique = support.len() as u32;
    let occurrences = unique + (0.3 * f64::from(unique) * (1.0 - a)).round() as u32;
    let mut named_multiset: BTreeMap<String, u32> =
        support.iter().map(|p| (p.id.clone(), 1)).collect();
    // Extra occurrences go to the best-matching predicates first.
    for k in 0..(occurrences - unique) as usize {
        let id = &support[k % support.len()].id;
        *named_multiset.get_mut(id).expect("support member") += 1;
    }

    let log3_n = (n_boxes as f64).ln() / 3f64.ln();
    let box_range = (((1.0 - a) * (2.0 + log3_n)).round() as i64 + eta).max(0) as u32;
    let disjunct = 1 + (2.0 * (1.0 - a)).round() as u32;
    let per_disjunct = ((f64::from(unique + box_range) / f64::from(disjunct)).round() as u32).max(1);
    let conjunct = disjunct * per_disjunct;

    let vol_named_total = if unique > 0 {
        (0.2 + 0.6 * a).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let vol_box_total = 1.0 - vol_named_total;
    let vol_conjunct_total =
        (vol_named_total + if box_range > 0 { vol_box_total } else { 0.0 }).clamp(0.0, 1.0);

    let box_coverage = (0.9 + 0.05 * eta_cov as f64).clamp(0.0, 1.0);
    let sampled = (n_boxes as usize).min(BOX_SAMPLE_CAP);
    let multiplicity = n_boxes as f64 / sampled as f64;
    let draws: Vec<f64> = (0..sampled).map(|_| rng.random_range(0.05..1.0)).collect();
    let draw_sum: f64 = draws.iter().sum();
    let box_volumes: Vec<f64> = draws
        .iter()
        .map(|w| box_coverage * w / draw_sum / multiplicity)
        .collect();
    let inv_d = 1.0 / f64::from(d_eff);
    let box_side_sums = box_volumes
        .iter()
        .map(|v| f64::from(d_eff) * v.powf(inv_d))
        .collect();

    let fingerprint = fingerprint(n_boxes, box_range, disjunct, conjunct, &named_multiset);

    DescriptionStats {
        n_boxes,
        unique_named: unique,
        named_occurrences: occurrences,
        box_range_count: box_range,
        disjunct_count: disjunct,
        conjunct_count: conjunct,
        vol_named_total,
        vol_named_unique: 0.8 * vol_named_total,
        vol_box_total,
        vol_box_unique: 0.8 * vol_box_total,
        vol_conjunct_total,
        vol_conjunct_unique: 0.8 * vol_conjunct_total,
        box_coverage,
        box_volumes,
        box_side_sums,
        named_multiset,
        fingerprint,
    }
}

fn fingerprint(
    n_boxes: u64,
    box_range: u32,
    disjunct: u32,
    conjunct: u32,
    named: &BTreeMap<String, u32>,
) -> String {
    let mut h = Sha256::new();
    h.update(format!("boxes={n_boxes};ranges={box_range};disj={disjunct};conj={conjunct};"));
    for (id, count) in named {
        h.update(format!("{id}x{count};"));
    }
    let digest = h.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// `log3(n_boxes) - d_eff * E`: zero at maximal trisection, negative otherwise.
pub fn box_count_feature(n_boxes: u64, depth: u8, d_eff: u32) -> f64 {
    assert!(n_boxes >= 1, "box count must be positive");
    (n_boxes as f64).ln() / 3f64.ln() - f64::from(d_eff) * f64::from(depth)
}

/// The 28-field selector feature vector.
pub fn extract_features(
    params: &StateParams,
    stats: &DescriptionStats,
    cfg: &EnvConfig,
) -> [f64; FEATURE_COUNT] {
    let mult = stats.box_multiplicity();
    let vols = summarize(&stats.box_volumes, mult);
    let sides = summarize(&stats.box_side_sums, mult);
    let mut v = [0.0; FEATURE_COUNT];
    v[..8].copy_from_slice(&vols.to_array());
    // The sample-based total drifts by rounding; use the exact coverage.
    v[5] = stats.box_coverage;
    v[8..16].copy_from_slice(&sides.to_array());
    v[16] = box_count_feature(
        stats.n_boxes,
        params.refinement_depth,
        params.effective_dims(cfg),
    );
    v[17] = f64::from(stats.unique_named);
    v[18] = f64::from(stats.named_occurrences);
    v[19] = f64::from(stats.conjunct_count);
    v[20] = f64::from(stats.disjunct_count);
    v[21] = f64::from(stats.box_range_count);
    v[22] = stats.vol_named_total;
    v[23] = stats.vol_named_unique;
    v[24] = stats.vol_box_total;
    v[25] = stats.vol_box_unique;
    v[26] = stats.vol_conjunct_total;
    v[27] = stats.vol_conjunct_unique;
    v
}

/// One timestep's state: parameters, description and features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateState {
    pub params: StateParams,
    pub stats: DescriptionStats,
    pub features: Vec<f64>,
    pub timestep: u32,
    pub question_id: String,
}

impl SurrogateState {
    /// Generates the description and features for `params`.
    pub fn generate(params: StateParams, cfg: &EnvConfig, timestep: u32, question_id: &str) -> Self {
        let stats = generate_description(&params, cfg);
        let features = extract_features(&params, &stats, cfg).to_vec();
        Self {
            params,
            stats,
            features,
            timestep,
            question_id: question_id.to_string(),
        }
    }

    pub fn feature_array(&self) -> [f64; FEATURE_COUNT] {
        let mut v = [0.0; FEATURE_COUNT];
        v.copy_from_slice(&self.features);
        v
    }
}

/// `[vol_named_total, vol_box_total, unique_named, conjunct_count, box_range_count]`.
pub fn autouser_criteria(s: &SurrogateState) -> [f64; CRITERIA_COUNT] {
    let st = &s.stats;
    [
        st.vol_named_total,
        st.vol_box_total,
        f64::from(st.unique_named),
        f64::from(st.conjunct_count),
        f64::from(st.box_range_count),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> EnvConfig {
        EnvConfig::default()
    }

    #[test]
    fn all_trisect_reaches_maximum() {
        let factors = vec![3u8; 24];
        assert_eq!(raw_box_count(&factors, 4 * 6), 3u64.pow(24));
        assert_eq!(box_count_feature(3u64.pow(24), 6, 4), 0.0);
    }

    #[test]
    fn box_count_feature_examples() {
        assert_eq!(box_count_feature(1, 2, 4), -8.0);
        assert!((box_count_feature(9, 3, 2) - (-4.0)).abs() < 1e-12);
    }

    #[test]
    #[should_panic]
    fn box_count_feature_rejects_zero() {
        box_count_feature(0, 1, 1);
    }

    #[test]
    fn everything_disallowed_leaves_only_box_ranges() {
        let c = cfg();
        let params = StateParams {
            disallowed_predicates: c.predicate_catalog.iter().map(|p| p.id.clone()).collect(),
            ..StateParams::default()
        };
        let st = generate_description(&params, &c);
        assert_eq!(st.unique_named, 0);
        assert_eq!(st.named_occurrences, 0);
        assert_eq!(st.vol_named_total, 0.0);
        assert_eq!(st.vol_box_total, 1.0);
        let s = SurrogateState::generate(params, &c, 0, "q");
        let crit = autouser_criteria(&s);
        assert_eq!(crit[..3], [0.0, 1.0, 0.0]);
        assert_eq!(crit[3], f64::from(s.stats.conjunct_count));
        assert_eq!(crit[4], f64::from(s.stats.box_range_count));
    }

    #[test]
    fn generation_is_deterministic() {
        let c = cfg();
        let p = StateParams::default();
        assert_eq!(generate_description(&p, &c), generate_description(&p, &c));
    }

    #[test]
    fn criteria_match_feature_slots() {
        let c = cfg();
        let s = SurrogateState::generate(StateParams::default(), &c, 0, "q");
        let crit = autouser_criteria(&s);
        for (k, &j) in CRITERIA_FEATURES.iter().enumerate() {
            assert_eq!(crit[k], s.features[j], "criterion {k}");
        }
    }

    #[test]
    fn validation_rejects_bad_inputs() {
        let mut c = cfg();
        c.question_dims = 5;
        assert!(matches!(c.validate(), Err(EnvError::QuestionDims { .. })));
        let mut c = cfg();
        c.predicate_catalog.push(c.predicate_catalog[0].clone());
        assert!(matches!(c.validate(), Err(EnvError::DuplicatePredicate(_))));
        let c = cfg();
        let p = StateParams {
            refinement_depth: 7,
            ..StateParams::default()
        };
        assert!(p.validate(&c).is_err());
        let p = StateParams {
            disallowed_predicates: ["nope".to_string()].into(),
            ..StateParams::default()
        };
        assert_eq!(
            p.validate(&c),
            Err(EnvError::UnknownPredicate("nope".into()))
        );
    }
}
