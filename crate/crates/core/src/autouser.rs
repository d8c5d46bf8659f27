//! The simulated user.
//!
//! It judges each new description only by how five criteria moved relative
//! to the previous description, then either reverses direction (satisfied)
//! or repeats its request. An adaptive threshold tied to the learner's
//! running success rate keeps the judgement from being trivially easy.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{CRITERIA_COUNT, CRITERIA_FEATURES};
use crate::history::History;
use crate::learning::{FeedbackKind, Request};
use crate::seed;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AutouserError {
    #[error("step band is inverted: {0} > {1}")]
    InvertedBand(f64, f64),
    #[error("k_au must be between 2 and {CRITERIA_COUNT}, got {0}")]
    BadCriteriaCount(usize),
    #[error("criterion index {0} outside 1..={1}")]
    BadCriterion(usize, usize),
    #[error("the autouser only judges m or l, got {0:?}")]
    NotDirectional(Request),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutouserConfig {
    pub k_au: usize,
    /// 1-based criteria whose sign is inverted.
    pub gamma1: Vec<usize>,
    /// 1-based criteria judged against the delta distribution.
    pub gamma2: Vec<usize>,
    pub max_adjustments: u32,
    pub k_stall: u32,
    pub ecdf_band: (f64, f64),
    pub sign_convention_flip: bool,
}

impl Default for AutouserConfig {
    fn default() -> Self {
        Self {
            k_au: 5,
            gamma1: vec![2, 3, 4, 5],
            gamma2: vec![1, 2, 3, 4],
            max_adjustments: 200,
            k_stall: 10,
            ecdf_band: (0.4, 0.6),
            sign_convention_flip: false,
        }
    }
}

impl AutouserConfig {
    pub fn validate(&self) -> Result<(), AutouserError> {
        if !(2..=CRITERIA_COUNT).contains(&self.k_au) {
            return Err(AutouserError::BadCriteriaCount(self.k_au));
        }
        for &j in self.gamma1.iter().chain(&self.gamma2) {
            if j == 0 || j > self.k_au {
                return Err(AutouserError::BadCriterion(j, self.k_au));
            }
        }
        if self.ecdf_band.0 > self.ecdf_band.1 {
            return Err(AutouserError::InvertedBand(self.ecdf_band.0, self.ecdf_band.1));
        }
        Ok(())
    }

    pub fn ell(&self) -> f64 {
        compute_ell(self.k_au).expect("validated k_au")
    }
}

/// `1` above `b`, `0` on `[a, b]`, `-1` below `a`.
pub fn step_fn(x: f64, a: f64, b: f64) -> Result<i8, AutouserError> {
    if a > b {
        return Err(AutouserError::InvertedBand(a, b));
    }
    Ok(if x > b {
        1
    } else if x < a {
        -1
    } else {
        0
    })
}

/// `-ln(k - 1) / ln(0.6)`, chosen so that `0.6^ell = 1 / (k - 1)`.
pub fn compute_ell(k_au: usize) -> Result<f64, AutouserError> {
    if k_au < 2 {
        return Err(AutouserError::BadCriteriaCount(k_au));
    }
    Ok(-((k_au - 1) as f64).ln() / 0.6f64.ln())
}

/// Satisfaction threshold `alpha g + (1 - alpha) g^ell`.
pub fn threshold(alpha: f64, g: f64, ell: f64) -> f64 {
    alpha * g + (1.0 - alpha) * g.powf(ell)
}

/// How far the agreement ratio sits above the lenient end of the
/// threshold range, scaled by the range width; `None` when undefined.
pub fn opinion_strength(s1: i32, s2: i32, g: f64, ell: f64) -> Option<f64> {
    let low = g.powf(ell);
    let width = g - low;
    (s2 != 0 && width.abs() > 1e-12).then(|| (f64::from(s1) / f64::from(s2) - low) / width)
}

/// Per-criterion change judgement.
///
/// `request` is the request that produced `curr` from `prev`. Criteria in
/// `gamma2` compare the change with the distribution of past same-question
/// changes; the rest only look at its sign.
pub fn compute_psi(
    prev: &[f64],
    curr: &[f64],
    history: &History,
    request: Request,
    cfg: &AutouserConfig,
) -> Result<Vec<i8>, AutouserError> {
    let direction: i8 = match request {
        Request::M => 1,
        Request::L => -1,
        other => return Err(AutouserError::NotDirectional(other)),
    };
    let (lo, hi) = cfg.ecdf_band;
    (1..=cfg.k_au)
        .map(|j| {
            let field = CRITERIA_FEATURES[j - 1];
            let mut sign: i8 = if cfg.gamma1.contains(&j) { -1 } else { 1 };
            if cfg.sign_convention_flip {
                sign = -sign;
            }
            let diff = prev[field] - curr[field];
            let inner = if cfg.gamma2.contains(&j) {
                let e = history.delta_distribution(field).ecdf(diff).unwrap_or(0.5);
                step_fn(e, lo, hi)?
            } else {
                step_fn(diff, 0.0, 0.0)?
            };
            Ok(direction * sign * inner)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutouserVerdict {
    pub psi: Vec<i8>,
    pub s1: i32,
    pub s2: i32,
    /// Absent when nothing changed (`s2 == 0`).
    pub alpha_draw: Option<f64>,
    pub g: f64,
    pub threshold: Option<f64>,
    pub satisfied: bool,
    pub response: FeedbackKind,
    pub opinion_strength: Option<f64>,
}

/// Reverses `r_prev` when the criteria moved convincingly in its
/// direction, otherwise repeats it. Draws from `rng` only when something
/// changed.
pub fn judge(
    prev: &[f64],
    curr: &[f64],
    history: &History,
    r_prev: Request,
    rng: &mut ChaCha8Rng,
    cfg: &AutouserConfig,
) -> Result<AutouserVerdict, AutouserError> {
    let psi = compute_psi(prev, curr, history, r_prev, cfg)?;
    let s1: i32 = psi.iter().map(|&p| i32::from(p)).sum();
    let s2: i32 = psi.iter().map(|&p| i32::from(p.abs())).sum();
    let g = history.global_success_rate();
    let ell = cfg.ell();
    let reissue = r_prev.to_feedback().expect("directional");
    if s2 == 0 {
        return Ok(AutouserVerdict {
            psi,
            s1,
            s2,
            alpha_draw: None,
            g,
            threshold: None,
            satisfied: false,
            response: reissue,
            opinion_strength: None,
        });
    }
    let alpha: f64 = rng.random();
    let thr = threshold(alpha, g, ell);
    let satisfied = f64::from(s1) / f64::from(s2) >= thr;
    let response = if satisfied {
        r_prev.opposite().and_then(Request::to_feedback).expect("directional")
    } else {
        reissue
    };
    Ok(AutouserVerdict {
        psi,
        s1,
        s2,
        alpha_draw: Some(alpha),
        g,
        threshold: Some(thr),
        satisfied,
        response,
        opinion_strength: opinion_strength(s1, s2, g, ell),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Continue,
    MaxReached,
    Stalled,
    BoxRangeOnly,
}

/// Per-session counters behind the termination rules.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionTrack {
    /// m/l requests issued so far.
    pub adjustments: u32,
    last_fingerprint: Option<String>,
    /// Trailing run of states with one fingerprint.
    pub same_fingerprint_run: u32,
    /// Trailing run of states without named predicates.
    pub box_only_run: u32,
}

impl SessionTrack {
    pub fn observe(&mut self, fingerprint: &str, unique_named: u32) {
        if self.last_fingerprint.as_deref() == Some(fingerprint) {
            self.same_fingerprint_run += 1;
        } else {
            self.same_fingerprint_run = 1;
            self.last_fingerprint = Some(fingerprint.to_string());
        }
        if unique_named == 0 {
            self.box_only_run += 1;
        } else {
            self.box_only_run = 0;
        }
    }
}

/// Checks the adjustment cap, then a stalled description, then a
/// description made only of box ranges.
pub fn should_terminate(track: &SessionTrack, cfg: &AutouserConfig) -> Termination {
    if track.adjustments >= cfg.max_adjustments {
        Termination::MaxReached
    } else if track.same_fingerprint_run >= cfg.k_stall {
        Termination::Stalled
    } else if track.box_only_run >= cfg.k_stall {
        Termination::BoxRangeOnly
    } else {
        Termination::Continue
    }
}

/// A session's simulated user: configuration plus its own random stream.
#[derive(Debug, Clone)]
pub struct Autouser {
    cfg: AutouserConfig,
    rng: ChaCha8Rng,
}

impl Autouser {
    pub fn new(cfg: AutouserConfig, master_seed: u64, session: u64) -> Result<Self, AutouserError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            rng: seed::rng(&[seed::tag::AUTOUSER, master_seed, session]),
        })
    }

    pub fn config(&self) -> &AutouserConfig {
        &self.cfg
    }

    /// Opening request: a fair coin between `m` and `l`.
    pub fn first_request(&mut self) -> FeedbackKind {
        if self.rng.random_bool(0.5) {
            FeedbackKind::More
        } else {
            FeedbackKind::Less
        }
    }

    pub fn judge(
        &mut self,
        prev: &[f64],
        curr: &[f64],
        history: &History,
        r_prev: Request,
    ) -> Result<AutouserVerdict, AutouserError> {
        judge(prev, curr, history, r_prev, &mut self.rng, &self.cfg)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::env::FEATURE_COUNT;
    use crate::history::HistoryConfig;

    fn empty_history() -> History {
        History::new(&HistoryConfig {
            reservoir_capacity: 16,
            seed: 0,
            operator_count: 23,
        })
    }

    fn with_criterion(j: usize, v: f64) -> Vec<f64> {
        let mut x = vec![0.0; FEATURE_COUNT];
        x[CRITERIA_FEATURES[j - 1]] = v;
        x
    }

    #[test]
    fn step_examples() {
        assert_eq!(step_fn(0.5, 0.4, 0.6), Ok(0));
        assert_eq!(step_fn(0.4, 0.4, 0.6), Ok(0));
        assert_eq!(step_fn(0.6, 0.4, 0.6), Ok(0));
        assert_eq!(step_fn(-4.0, 0.0, 0.0), Ok(-1));
        assert_eq!(step_fn(1.0, 0.5, 0.5), Ok(1));
        assert_eq!(step_fn(0.0, 0.5, 0.5), Ok(-1));
        assert!(step_fn(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn psi_examples() {
        let h = empty_history();
        let cfg = AutouserConfig::default();
        let psi = compute_psi(&with_criterion(5, 3.0), &with_criterion(5, 7.0), &h, Request::L, &cfg).unwrap();
        assert_eq!(psi[4], -1);
        let psi = compute_psi(&with_criterion(5, 7.0), &with_criterion(5, 3.0), &h, Request::M, &cfg).unwrap();
        assert_eq!(psi[4], -1);
        // Empty delta reservoir: ECDF 0.5 sits inside the band.
        let psi = compute_psi(&with_criterion(1, 9.0), &with_criterion(1, 1.0), &h, Request::M, &cfg).unwrap();
        assert_eq!(psi[0], 0);
        let flipped = AutouserConfig {
            sign_convention_flip: true,
            ..cfg.clone()
        };
        let psi = compute_psi(&with_criterion(5, 7.0), &with_criterion(5, 3.0), &h, Request::M, &flipped).unwrap();
        assert_eq!(psi[4], 1);
        assert!(compute_psi(&with_criterion(5, 7.0), &with_criterion(5, 3.0), &h, Request::B, &cfg).is_err());
    }

    #[test]
    fn ell_anchors() {
        let ell = compute_ell(5).unwrap();
        assert!((ell - 2.713_830_897_713_448).abs() < 1e-9);
        assert!((0.6f64.powf(ell) - 0.25).abs() < 1e-12);
        assert!(((0.6 + 0.6f64.powf(ell)) / 2.0 - 0.425).abs() < 1e-12);
        assert_eq!(compute_ell(2).unwrap(), 0.0);
        assert!(compute_ell(1).is_err());
    }

    #[test]
    fn judge_paths() {
        let h = empty_history();
        let cfg = AutouserConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let same = vec![1.0; FEATURE_COUNT];
        let v = judge(&same, &same, &h, Request::M, &mut rng, &cfg).unwrap();
        assert_eq!((v.s2, v.alpha_draw, v.response.clone()), (0, None, FeedbackKind::More));
        // Box ranges rising under m: the inverted sign makes it a +1.
        let v = judge(&with_criterion(5, 1.0), &with_criterion(5, 4.0), &h, Request::M, &mut rng, &cfg).unwrap();
        assert_eq!((v.s1, v.s2), (1, 1));
        assert!(v.satisfied);
        assert_eq!(v.response, FeedbackKind::Less);
    }

    #[test]
    fn cold_start_is_lenient() {
        // g = 0 makes the threshold 0 for every alpha.
        for alpha in [0.0, 0.3, 1.0] {
            assert_eq!(threshold(alpha, 0.0, compute_ell(5).unwrap()), 0.0);
        }
        assert!(0.2 >= threshold(0.7, 0.0, 2.7));
    }

    #[test]
    fn minimal_majority_is_three_to_one() {
        let mut best = None;
        for pos in 0..=5i32 {
            for neg in 0..=(5 - pos) {
                if pos + neg == 0 {
                    continue;
                }
                if f64::from(pos - neg) / f64::from(pos + neg) >= 0.425 {
                    let cand = (pos + neg, pos, neg);
                    if best.is_none_or(|b| cand < b) && neg > 0 {
                        best = Some(cand);
                    }
                }
            }
        }
        assert_eq!(best.map(|(_, p, n)| (p, n)), Some((3, 1)));
    }

    #[test]
    fn termination_rules() {
        let cfg = AutouserConfig::default();
        let mut t = SessionTrack {
            adjustments: 200,
            ..SessionTrack::default()
        };
        assert_eq!(should_terminate(&t, &cfg), Termination::MaxReached);
        t.adjustments = 3;
        for _ in 0..10 {
            t.observe("abc", 2);
        }
        assert_eq!(should_terminate(&t, &cfg), Termination::Stalled);
        let mut t = SessionTrack::default();
        for i in 0..3 {
            t.observe(&i.to_string(), 0);
        }
        assert_eq!(should_terminate(&t, &cfg), Termination::Continue);
        for i in 3..10 {
            t.observe(&i.to_string(), 0);
        }
        assert_eq!(should_terminate(&t, &cfg), Termination::BoxRangeOnly);
    }

    #[test]
    fn config_validation() {
        assert!(AutouserConfig::default().validate().is_ok());
        let bad = AutouserConfig {
            k_au: 1,
            ..AutouserConfig::default()
        };
        assert_eq!(bad.validate(), Err(AutouserError::BadCriteriaCount(1)));
        let bad = AutouserConfig {
            k_au: 3,
            ..AutouserConfig::default()
        };
        assert!(matches!(bad.validate(), Err(AutouserError::BadCriterion(4, 3))));
    }
}
