//! Reward derivation from consecutive user requests and the additive
//! selector-weight update.

use serde::{Deserialize, Serialize};

use crate::decision::SelectorWeights;
use crate::vote::VoteMatrix;

/// Sub-commands available behind the `u` request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum UserAction {
    /// Apply the named operator directly.
    ApplyOperator { operator: String },
    /// Restore the state shown at `timestep` of the current question.
    HistoryTravel { timestep: u32 },
    /// Report the disallowed predicates; does not advance the session.
    ListDisallowed,
}

/// A user request, issued after seeing a description.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum FeedbackKind {
    /// Make the description more abstract.
    #[serde(rename = "m")]
    More,
    /// Make the description less abstract.
    #[serde(rename = "l")]
    Less,
    /// End the interrogation about the current question.
    #[serde(rename = "b")]
    Break,
    #[serde(rename = "u")]
    User { action: UserAction },
}

/// Payload-free view of [`FeedbackKind`], used for filtering and indexing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Request {
    #[serde(rename = "m")]
    M,
    #[serde(rename = "l")]
    L,
    #[serde(rename = "b")]
    B,
    #[serde(rename = "u")]
    U,
}

impl FeedbackKind {
    pub fn request(&self) -> Request {
        match self {
            FeedbackKind::More => Request::M,
            FeedbackKind::Less => Request::L,
            FeedbackKind::Break => Request::B,
            FeedbackKind::User { .. } => Request::U,
        }
    }

    pub fn short(&self) -> &'static str {
        match self.request() {
            Request::M => "m",
            Request::L => "l",
            Request::B => "b",
            Request::U => "u",
        }
    }
}

impl Request {
    /// `m <-> l`; `None` for the other kinds.
    pub fn opposite(self) -> Option<Request> {
        match self {
            Request::M => Some(Request::L),
            Request::L => Some(Request::M),
            _ => None,
        }
    }

    pub fn is_directional(self) -> bool {
        matches!(self, Request::M | Request::L)
    }

    pub fn to_feedback(self) -> Option<FeedbackKind> {
        match self {
            Request::M => Some(FeedbackKind::More),
            Request::L => Some(FeedbackKind::Less),
            Request::B => Some(FeedbackKind::Break),
            Request::U => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardSignal {
    pub y: i8,
    pub present: bool,
}

impl RewardSignal {
    pub const ABSENT: RewardSignal = RewardSignal { y: 0, present: false };

    pub fn of(y: i8) -> Self {
        Self { y, present: true }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LearningError {
    #[error("request {0:?} requires a following request to score it")]
    MissingNext(Request),
    #[error("weight vector has {weights} entries but {votes} selectors voted")]
    LengthMismatch { weights: usize, votes: usize },
}

/// Reward for the request `current` given the request that followed it.
///
/// A reversal (`m` then `l`, or `l` then `m`) or an exit counts as success,
/// a repeat as failure, and anything involving `u` as neutral. `b` ends the
/// session, so it has no reward of its own.
pub fn reward_from_feedback(
    current: Request,
    next: Option<Request>,
) -> Result<RewardSignal, LearningError> {
    use Request::*;
    if current == B {
        return Ok(RewardSignal::ABSENT);
    }
    let Some(next) = next else {
        return Err(LearningError::MissingNext(current));
    };
    let y = match (current, next) {
        (U, _) => 0,
        (_, U) => 0,
        (M, M) | (L, L) => -1,
        (M, L) | (L, M) => 1,
        (M, B) | (L, B) => 1,
        (B, _) => unreachable!(),
    };
    Ok(RewardSignal::of(y))
}

/// `w_i += y * (vote_i(chosen) - 1/k)` for every selector.
///
/// `votes` must be exactly the distributions cast when `chosen` (a
/// selectable-operator index) was picked.
pub fn update_weights(
    weights: &mut SelectorWeights,
    votes: &VoteMatrix,
    chosen: usize,
    reward: RewardSignal,
) -> Result<(), LearningError> {
    if weights.len() != votes.rows() {
        return Err(LearningError::LengthMismatch {
            weights: weights.len(),
            votes: votes.rows(),
        });
    }
    if !reward.present || reward.y == 0 {
        return Ok(());
    }
    let y = f64::from(reward.y);
    let baseline = 1.0 / votes.cols() as f64;
    for (i, w) in weights.iter_mut().enumerate() {
        *w += y * (votes.get(i, chosen) - baseline);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use Request::*;

    #[test]
    fn reward_table() {
        let cases = [
            (M, Some(M), Some(-1)),
            (M, Some(L), Some(1)),
            (M, Some(B), Some(1)),
            (L, Some(L), Some(-1)),
            (L, Some(M), Some(1)),
            (L, Some(B), Some(1)),
            (M, Some(U), Some(0)),
            (L, Some(U), Some(0)),
            (U, Some(L), Some(0)),
            (U, Some(B), Some(0)),
            (B, None, None),
        ];
        for (cur, next, want) in cases {
            let got = reward_from_feedback(cur, next).unwrap();
            match want {
                Some(y) => assert_eq!(got, RewardSignal::of(y), "{cur:?},{next:?}"),
                None => assert!(!got.present),
            }
        }
        assert_eq!(
            reward_from_feedback(M, None),
            Err(LearningError::MissingNext(M))
        );
    }

    fn matrix(rows: &[&[f64]]) -> VoteMatrix {
        let mut m = VoteMatrix::new(rows[0].len());
        for r in rows {
            m.push_row(r);
        }
        m
    }

    #[test]
    fn dirac_and_zero_mass_deltas() {
        let mut dirac = vec![0.0; 10];
        dirac[3] = 1.0;
        let votes = matrix(&[&dirac, &[0.1; 10]]);
        let mut w = SelectorWeights::new(vec![1.0, 1.0]);
        update_weights(&mut w, &votes, 3, RewardSignal::of(1)).unwrap();
        assert!((w[0] - 1.9).abs() < 1e-15);
        assert_eq!(w[1], 1.0);

        let mut w = SelectorWeights::new(vec![1.0]);
        let votes = matrix(&[&dirac]);
        update_weights(&mut w, &votes, 0, RewardSignal::of(-1)).unwrap();
        assert!((w[0] - 1.1).abs() < 1e-15);
    }

    #[test]
    fn zero_reward_is_bit_identical() {
        let votes = matrix(&[&[0.7, 0.3]]);
        let mut w = SelectorWeights::new(vec![0.123_456_789]);
        update_weights(&mut w, &votes, 0, RewardSignal::of(0)).unwrap();
        assert_eq!(w[0].to_bits(), 0.123_456_789f64.to_bits());
    }

    #[test]
    fn feedback_json_shape() {
        let f: FeedbackKind = serde_json::from_str(r#"{"kind":"m"}"#).unwrap();
        assert_eq!(f, FeedbackKind::More);
        let u = FeedbackKind::User {
            action: UserAction::HistoryTravel { timestep: 2 },
        };
        let s = serde_json::to_string(&u).unwrap();
        assert_eq!(s, r#"{"kind":"u","action":{"type":"history_travel","timestep":2}}"#);
    }
}
