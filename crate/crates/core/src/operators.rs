//! The operator catalog.
//!
//! Operators fall into three groups: the special `start` and `blank`
//! operators, parameter-adjusting operators that move one or two state
//! parameters (clamped at their range bounds), and four
//! predicate-constraining operators that disallow or re-allow one named
//! predicate. Which predicate is chosen by a UCB1 bandit over the whole
//! interaction history; see [`select_predicate_to_remove`].

use serde::{Deserialize, Serialize};

use crate::env::{
    EnvConfig, StateParams, SurrogateState, MAX_DEPTH, MAX_MERGE_ITERS, MAX_SAMPLING_RADIUS,
    MERGE_PRECISIONS, MIN_DEPTH, MIN_SAMPLING_RADIUS,
};
use crate::history::History;
use crate::learning::Request;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorCategory {
    Special,
    ParamAdjust,
    PredicateConstrain,
}

/// Which way a predicate-constraining operator tries to move abstraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aim {
    MoreAbstract,
    LessAbstract,
}

impl Aim {
    /// The request this aim answers (`r_T` in the occurrence count).
    pub fn request(self) -> Request {
        match self {
            Aim::MoreAbstract => Request::M,
            Aim::LessAbstract => Request::L,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op")]
pub enum OperatorKind {
    Start,
    Blank,
    SamplingRadiusUp,
    SamplingRadiusDown,
    ReuseReachOn,
    ReuseReachOff,
    SplitQuestionOnly,
    SplitAllAxes,
    MergeItersUp,
    MergeItersDown,
    MergeItersZero,
    MergePrecisionCoarser,
    MergePrecisionFiner,
    RefineDeeper,
    RefineShallower,
    GreaterAbstractionOn,
    GreaterAbstractionOff,
    ComboMoreAbstract,
    ComboLessAbstract,
    Disallow { aim: Aim },
    Reallow { aim: Aim },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorSpec {
    pub index: usize,
    pub name: String,
    pub category: OperatorCategory,
    pub kind: OperatorKind,
    pub mutation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorCatalog {
    operators: Vec<OperatorSpec>,
}

pub const START: usize = 0;
pub const BLANK: usize = 1;

const SAMPLING_STEP: f64 = 1.5;

fn table() -> Vec<(&'static str, OperatorCategory, OperatorKind, &'static str)> {
    use OperatorCategory::*;
    use OperatorKind::*;
    vec![
        ("start", Special, Start, "generate the initial description from the question's parameters"),
        ("blank", Special, Blank, "regenerate with fresh randomness; parameters unchanged"),
        ("sampling_radius_up", ParamAdjust, SamplingRadiusUp, "sampling radius x1.5 (max 2.0)"),
        ("sampling_radius_down", ParamAdjust, SamplingRadiusDown, "sampling radius /1.5 (min 0.1)"),
        ("reuse_reach_on", ParamAdjust, ReuseReachOn, "reuse previous reachability results"),
        ("reuse_reach_off", ParamAdjust, ReuseReachOff, "recompute reachability from scratch"),
        ("split_question_only", ParamAdjust, SplitQuestionOnly, "split boxes only along question variables"),
        ("split_all_axes", ParamAdjust, SplitAllAxes, "split boxes along every input variable"),
        ("merge_iters_up", ParamAdjust, MergeItersUp, "one more box-merging iteration (max 3)"),
        ("merge_iters_down", ParamAdjust, MergeItersDown, "one fewer box-merging iteration (min 0)"),
        ("merge_iters_zero", ParamAdjust, MergeItersZero, "disable box merging"),
        ("merge_precision_coarser", ParamAdjust, MergePrecisionCoarser, "next coarser merge precision in {1e-6, 1e-4, 1e-2}"),
        ("merge_precision_finer", ParamAdjust, MergePrecisionFiner, "next finer merge precision in {1e-6, 1e-4, 1e-2}"),
        ("refine_deeper", ParamAdjust, RefineDeeper, "refinement depth +1 (side length /3, max depth 6)"),
        ("refine_shallower", ParamAdjust, RefineShallower, "refinement depth -1 (side length x3, min depth 1)"),
        ("greater_abstraction_on", ParamAdjust, GreaterAbstractionOn, "set produce_greater_abstraction"),
        ("greater_abstraction_off", ParamAdjust, GreaterAbstractionOff, "clear produce_greater_abstraction"),
        ("combo_more_abstract", ParamAdjust, ComboMoreAbstract, "refinement depth -1 and set produce_greater_abstraction"),
        ("combo_less_abstract", ParamAdjust, ComboLessAbstract, "refinement depth +1 and clear produce_greater_abstraction"),
        ("disallow_for_more", PredicateConstrain, Disallow { aim: Aim::MoreAbstract }, "disallow one occurring named predicate, aiming for more abstraction"),
        ("disallow_for_less", PredicateConstrain, Disallow { aim: Aim::LessAbstract }, "disallow one occurring named predicate, aiming for less abstraction"),
        ("reallow_for_more", PredicateConstrain, Reallow { aim: Aim::MoreAbstract }, "re-allow one disallowed predicate, aiming for more abstraction"),
        ("reallow_for_less", PredicateConstrain, Reallow { aim: Aim::LessAbstract }, "re-allow one disallowed predicate, aiming for less abstraction"),
    ]
}

impl OperatorCatalog {
    pub fn build() -> Self {
        let operators = table()
            .into_iter()
            .enumerate()
            .map(|(index, (name, category, kind, mutation))| OperatorSpec {
                index,
                name: name.to_string(),
                category,
                kind,
                mutation: mutation.to_string(),
            })
            .collect();
        Self { operators }
    }

    pub fn len(&self) -> usize {
        self.operators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.operators.is_empty()
    }

    /// Number of operators the learner may choose (everything but `start`).
    pub fn selectable_count(&self) -> usize {
        self.operators.len() - 1
    }

    pub fn get(&self, index: usize) -> &OperatorSpec {
        &self.operators[index]
    }

    pub fn operators(&self) -> &[OperatorSpec] {
        &self.operators
    }

    pub fn by_name(&self, name: &str) -> Option<&OperatorSpec> {
        self.operators.iter().find(|o| o.name == name)
    }

    /// Catalog index -> selectable index (`None` for `start`).
    pub fn to_selectable(&self, index: usize) -> Option<usize> {
        (index != START && index < self.operators.len()).then(|| index - 1)
    }

    pub fn from_selectable(&self, selectable: usize) -> usize {
        assert!(selectable < self.selectable_count());
        selectable + 1
    }

    /// Selectable indices of the predicate-constraining operators.
    pub fn predicate_operators(&self) -> Vec<usize> {
        self.operators
            .iter()
            .filter(|o| o.category == OperatorCategory::PredicateConstrain)
            .map(|o| o.index - 1)
            .collect()
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum OperatorError {
    #[error("operator {0} is not applicable to this state")]
    Inapplicable(String),
    #[error("the start operator only opens a question")]
    StartNotSelectable,
    #[error("unknown operator {0:?}")]
    Unknown(String),
}

/// Whether `kind` can act on `state` (parameter operators always can).
pub fn is_applicable(kind: OperatorKind, state: &SurrogateState) -> bool {
    match kind {
        OperatorKind::Disallow { .. } => state.stats.unique_named > 0,
        OperatorKind::Reallow { .. } => !state.params.disallowed_predicates.is_empty(),
        OperatorKind::Start => false,
        _ => true,
    }
}

fn step_precision(current: f64, coarser: bool) -> f64 {
    let i = MERGE_PRECISIONS
        .iter()
        .position(|&p| p == current)
        .unwrap_or(1);
    let j = if coarser {
        (i + 1).min(MERGE_PRECISIONS.len() - 1)
    } else {
        i.saturating_sub(1)
    };
    MERGE_PRECISIONS[j]
}

fn deeper(p: &mut StateParams) {
    p.refinement_depth = (p.refinement_depth + 1).min(MAX_DEPTH);
}

fn shallower(p: &mut StateParams) {
    p.refinement_depth = p.refinement_depth.saturating_sub(1).max(MIN_DEPTH);
}

/// Applies operator `index` to `state`, producing the next state.
///
/// `fresh_noise` seeds the regenerated description. Predicate operators
/// consult `history` to pick their predicate. Returns
/// [`OperatorError::Inapplicable`] when the operator cannot act; callers
/// then fall back to copying the state.
pub fn apply_operator(
    catalog: &OperatorCatalog,
    index: usize,
    state: &SurrogateState,
    history: &History,
    cfg: &EnvConfig,
    fresh_noise: u64,
) -> Result<SurrogateState, OperatorError> {
    let spec = catalog.get(index);
    if !is_applicable(spec.kind, state) {
        return Err(match spec.kind {
            OperatorKind::Start => OperatorError::StartNotSelectable,
            _ => OperatorError::Inapplicable(spec.name.clone()),
        });
    }
    let mut p = state.params.clone();
    match spec.kind {
        OperatorKind::Start => unreachable!(),
        OperatorKind::Blank => {}
        OperatorKind::SamplingRadiusUp => {
            p.sampling_radius = (p.sampling_radius * SAMPLING_STEP).min(MAX_SAMPLING_RADIUS)
        }
        OperatorKind::SamplingRadiusDown => {
            p.sampling_radius = (p.sampling_radius / SAMPLING_STEP).max(MIN_SAMPLING_RADIUS)
        }
        OperatorKind::ReuseReachOn => p.reuse_reach = true,
        OperatorKind::ReuseReachOff => p.reuse_reach = false,
        OperatorKind::SplitQuestionOnly => p.split_question_vars_only = true,
        OperatorKind::SplitAllAxes => p.split_question_vars_only = false,
        OperatorKind::MergeItersUp => p.merge_iters = (p.merge_iters + 1).min(MAX_MERGE_ITERS),
        OperatorKind::MergeItersDown => p.merge_iters = p.merge_iters.saturating_sub(1),
        OperatorKind::MergeItersZero => p.merge_iters = 0,
        OperatorKind::MergePrecisionCoarser => p.merge_precision = step_precision(p.merge_precision, true),
        OperatorKind::MergePrecisionFiner => p.merge_precision = step_precision(p.merge_precision, false),
        OperatorKind::RefineDeeper => deeper(&mut p),
        OperatorKind::RefineShallower => shallower(&mut p),
        OperatorKind::GreaterAbstractionOn => p.produce_greater_abstraction = true,
        OperatorKind::GreaterAbstractionOff => p.produce_greater_abstraction = false,
        OperatorKind::ComboMoreAbstract => {
            shallower(&mut p);
            p.produce_greater_abstraction = true;
        }
        OperatorKind::ComboLessAbstract => {
            deeper(&mut p);
            p.produce_greater_abstraction = false;
        }
        OperatorKind::Disallow { aim } => {
            let id = select_predicate_to_remove(state, history, aim.request())
                .map_err(|_| OperatorError::Inapplicable(spec.name.clone()))?;
            p.disallowed_predicates.insert(id);
        }
        OperatorKind::Reallow { aim } => {
            let id = select_predicate_to_reallow(state, history, aim.request())
                .map_err(|_| OperatorError::Inapplicable(spec.name.clone()))?;
            p.disallowed_predicates.remove(&id);
        }
    }
    p.noise_draw = fresh_noise;
    Ok(SurrogateState::generate(p, cfg, state.timestep + 1, &state.question_id))
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("no candidate predicates")]
pub struct NoCandidates;

/// Per-candidate bandit statistics, exposed for diagnostics and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct PredicateArm {
    pub id: String,
    pub occ: u64,
    pub succ: u64,
    pub index: f64,
}

/// UCB1 over arms with `(occ, succ)` counts: `succ/occ + sqrt(2 ln N / occ)`
/// with `N` the total of `occ`; untried arms score `+inf`. Ties go to the
/// lexicographically smallest id.
pub fn ucb1_pick(mut arms: Vec<PredicateArm>) -> Option<PredicateArm> {
    let total: u64 = arms.iter().map(|a| a.occ).sum();
    for a in &mut arms {
        a.index = if a.occ == 0 {
            f64::INFINITY
        } else {
            a.succ as f64 / a.occ as f64 + (2.0 * (total as f64).ln() / a.occ as f64).sqrt()
        };
    }
    arms.sort_by(|a, b| a.id.cmp(&b.id));
    let mut best: Option<PredicateArm> = None;
    for a in arms {
        if best.as_ref().is_none_or(|b| a.index > b.index) {
            best = Some(a);
        }
    }
    best
}

/// Bandit statistics for removing each predicate that occurs in `state`.
///
/// A past state counts as an occurrence of `p` when the user asked for
/// `request` after seeing it and the state that answered the same
/// question had fewer occurrences of `p`; it is a success when the user
/// then reversed direction or exited.
pub fn removal_arms(state: &SurrogateState, history: &History, request: Request) -> Vec<PredicateArm> {
    let candidates: Vec<&String> = state.stats.named_multiset.keys().collect();
    arms(history, request, candidates, |before, after| before > after)
}

/// Bandit statistics for re-allowing each predicate disallowed in `state`.
pub fn reallow_arms(state: &SurrogateState, history: &History, request: Request) -> Vec<PredicateArm> {
    let candidates: Vec<&String> = state.params.disallowed_predicates.iter().collect();
    arms(history, request, candidates, |before, after| before < after)
}

fn arms(
    history: &History,
    request: Request,
    candidates: Vec<&String>,
    changed: impl Fn(f64, f64) -> bool,
) -> Vec<PredicateArm> {
    let reversal = request.opposite();
    let mut out: Vec<PredicateArm> = candidates
        .iter()
        .map(|id| PredicateArm {
            id: (*id).clone(),
            occ: 0,
            succ: 0,
            index: 0.0,
        })
        .collect();
    for idx in 0..history.len() {
        if history.request_after(idx) != Some(request) {
            continue;
        }
        let rec = history.record(idx);
        let next = history.successor(idx);
        let next_ok = next.is_some_and(|n| {
            let after = history.request_after(n);
            after == Some(Request::B) || (after.is_some() && after == reversal)
        });
        for arm in &mut out {
            let before = f64::from(rec.omega(&arm.id));
            let after = next.map_or(f64::INFINITY, |n| f64::from(history.record(n).omega(&arm.id)));
            if changed(before, after) {
                arm.occ += 1;
                if next_ok {
                    arm.succ += 1;
                }
            }
        }
    }
    out
}

/// Predicate to disallow, by UCB1 over removal outcomes.
pub fn select_predicate_to_remove(
    state: &SurrogateState,
    history: &History,
    request: Request,
) -> Result<String, NoCandidates> {
    ucb1_pick(removal_arms(state, history, request))
        .map(|a| a.id)
        .ok_or(NoCandidates)
}

/// Predicate to re-allow; same bandit with the occurrence test reversed.
pub fn select_predicate_to_reallow(
    state: &SurrogateState,
    history: &History,
    request: Request,
) -> Result<String, NoCandidates> {
    ucb1_pick(reallow_arms(state, history, request))
        .map(|a| a.id)
        .ok_or(NoCandidates)
}
