//! The interaction store.
//!
//! Records are appended once and never modified. Facts that arrive later
//! (the request a user issued after seeing a state, and the reward that
//! request implies for the record that produced the state) are kept in
//! side tables keyed by record index, mirroring the separate events in the
//! on-disk log. Streaming statistics are maintained on append:
//! per-feature moments and reservoirs over raw values, reservoirs over
//! consecutive same-question differences, and operator use counts.

mod moments;
mod reservoir;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

pub use moments::RunningMoments;
pub use reservoir::{Reservoir, DEFAULT_CAPACITY};

use crate::env::{DescriptionStats, StateParams, SurrogateState, FEATURE_COUNT};
use crate::learning::{FeedbackKind, Request};
use crate::seed;

/// Description statistics without the per-box lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
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
    pub box_coverage: f64,
    pub named_multiset: BTreeMap<String, u32>,
    pub fingerprint: String,
}

impl From<&DescriptionStats> for StatsSummary {
    fn from(s: &DescriptionStats) -> Self {
        Self {
            n_boxes: s.n_boxes,
            unique_named: s.unique_named,
            named_occurrences: s.named_occurrences,
            box_range_count: s.box_range_count,
            disjunct_count: s.disjunct_count,
            conjunct_count: s.conjunct_count,
            vol_named_total: s.vol_named_total,
            vol_named_unique: s.vol_named_unique,
            vol_box_total: s.vol_box_total,
            vol_box_unique: s.vol_box_unique,
            vol_conjunct_total: s.vol_conjunct_total,
            vol_conjunct_unique: s.vol_conjunct_unique,
            box_coverage: s.box_coverage,
            named_multiset: s.named_multiset.clone(),
            fingerprint: s.fingerprint.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionRecord {
    pub session_id: u64,
    pub question_id: String,
    pub t: u32,
    pub params: StateParams,
    pub summary: StatsSummary,
    pub features: [f64; FEATURE_COUNT],
    /// The request that produced this state; `None` for the start state.
    pub request: Option<FeedbackKind>,
    /// Catalog index of the operator applied; `None` for history travel.
    pub operator: Option<usize>,
    pub fell_back: bool,
}

impl InteractionRecord {
    pub fn from_state(
        session_id: u64,
        state: &SurrogateState,
        request: Option<FeedbackKind>,
        operator: Option<usize>,
        fell_back: bool,
    ) -> Self {
        Self {
            session_id,
            question_id: state.question_id.clone(),
            t: state.timestep,
            params: state.params.clone(),
            summary: StatsSummary::from(&state.stats),
            features: state.feature_array(),
            request,
            operator,
            fell_back,
        }
    }

    pub fn omega(&self, predicate: &str) -> u32 {
        self.summary.named_multiset.get(predicate).copied().unwrap_or(0)
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum HistoryError {
    #[error("record ({session}, {t}) already exists")]
    Duplicate { session: u64, t: u32 },
    #[error("session {session} expected timestep {expected}, got {got}")]
    NonContiguous { session: u64, expected: u32, got: u32 },
    #[error("no record ({session}, {t})")]
    UnknownRecord { session: u64, t: u32 },
    #[error("record ({session}, {t}) already has a reward")]
    RewardResolved { session: u64, t: u32 },
}

#[derive(Debug, Clone)]
pub struct HistoryConfig {
    pub reservoir_capacity: usize,
    pub seed: u64,
    pub operator_count: usize,
}

/// A directional decision whose outcome is known: the state the operator
/// was applied to, the operator and the reward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedDecision {
    pub record: usize,
    pub pre: usize,
    pub operator: usize,
    pub reward: i8,
}

pub struct History {
    records: Vec<InteractionRecord>,
    rewards: Vec<Option<i8>>,
    after: Vec<Option<Request>>,
    predecessor: Vec<Option<usize>>,
    successor: Vec<Option<usize>>,
    keys: HashMap<(u64, u32), usize>,
    last_of_session: HashMap<u64, usize>,
    last_of_question: HashMap<String, usize>,
    moments: [RunningMoments; FEATURE_COUNT],
    raw: Vec<Reservoir>,
    delta: Vec<Reservoir>,
    decided_m: Vec<ResolvedDecision>,
    decided_l: Vec<ResolvedDecision>,
    use_counts: Vec<u64>,
    successes: u64,
    failures: u64,
}

impl History {
    pub fn new(cfg: &HistoryConfig) -> Self {
        let reservoirs = |tag| {
            (0..FEATURE_COUNT)
                .map(|j| Reservoir::new(cfg.reservoir_capacity, seed::derive(&[tag, cfg.seed, j as u64])))
                .collect()
        };
        Self {
            records: Vec::new(),
            rewards: Vec::new(),
            after: Vec::new(),
            predecessor: Vec::new(),
            successor: Vec::new(),
            keys: HashMap::new(),
            last_of_session: HashMap::new(),
            last_of_question: HashMap::new(),
            moments: [RunningMoments::default(); FEATURE_COUNT],
            raw: reservoirs(seed::tag::RESERVOIR_RAW),
            delta: reservoirs(seed::tag::RESERVOIR_DELTA),
            decided_m: Vec::new(),
            decided_l: Vec::new(),
            use_counts: vec![0; cfg.operator_count],
            successes: 0,
            failures: 0,
        }
    }

    /// Appends a record and updates every streaming statistic.
    pub fn append(&mut self, rec: InteractionRecord) -> Result<usize, HistoryError> {
        let key = (rec.session_id, rec.t);
        if self.keys.contains_key(&key) {
            return Err(HistoryError::Duplicate {
                session: rec.session_id,
                t: rec.t,
            });
        }
        let expected = self
            .last_of_session
            .get(&rec.session_id)
            .map_or(0, |&i| self.records[i].t + 1);
        if rec.t != expected {
            return Err(HistoryError::NonContiguous {
                session: rec.session_id,
                expected,
                got: rec.t,
            });
        }

        let idx = self.records.len();
        let pred = self
            .last_of_question
            .get(&rec.question_id)
            .copied()
            .filter(|&p| self.records[p].t + 1 == rec.t);
        if let Some(p) = pred {
            self.successor[p] = Some(idx);
            for j in 0..FEATURE_COUNT {
                self.delta[j].insert(rec.features[j] - self.records[p].features[j]);
            }
        }
        for j in 0..FEATURE_COUNT {
            self.moments[j].push(rec.features[j]);
            self.raw[j].insert(rec.features[j]);
        }
        if let Some(op) = rec.operator {
            if rec.t > 0 {
                self.use_counts[op] += 1;
            }
        }

        self.keys.insert(key, idx);
        self.last_of_session.insert(rec.session_id, idx);
        self.last_of_question.insert(rec.question_id.clone(), idx);
        self.predecessor.push(pred);
        self.successor.push(None);
        self.rewards.push(None);
        self.after.push(None);
        self.records.push(rec);
        Ok(idx)
    }

    /// Notes the request a user issued after seeing record `(session, t)`.
    pub fn record_request(&mut self, session: u64, t: u32, request: Request) -> Result<(), HistoryError> {
        let idx = self.index_of(session, t)?;
        self.after[idx] = Some(request);
        Ok(())
    }

    /// Stores the reward for the request that produced record `(session, t)`.
    pub fn resolve_reward(&mut self, session: u64, t: u32, y: i8) -> Result<(), HistoryError> {
        let idx = self.index_of(session, t)?;
        if self.rewards[idx].is_some() {
            return Err(HistoryError::RewardResolved { session, t });
        }
        self.rewards[idx] = Some(y);
        match y {
            1 => self.successes += 1,
            -1 => self.failures += 1,
            _ => {}
        }
        let rec = &self.records[idx];
        if let (Some(req), Some(op), Some(pre)) = (
            rec.request.as_ref().map(FeedbackKind::request),
            rec.operator,
            self.predecessor[idx],
        ) {
            let decision = ResolvedDecision {
                record: idx,
                pre,
                operator: op,
                reward: y,
            };
            match req {
                Request::M => self.decided_m.push(decision),
                Request::L => self.decided_l.push(decision),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn index_of(&self, session: u64, t: u32) -> Result<usize, HistoryError> {
        self.keys
            .get(&(session, t))
            .copied()
            .ok_or(HistoryError::UnknownRecord { session, t })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record(&self, idx: usize) -> &InteractionRecord {
        &self.records[idx]
    }

    pub fn records(&self) -> &[InteractionRecord] {
        &self.records
    }

    pub fn reward(&self, idx: usize) -> Option<i8> {
        self.rewards[idx]
    }

    /// The request issued after seeing record `idx`, if any yet.
    pub fn request_after(&self, idx: usize) -> Option<Request> {
        self.after[idx]
    }

    /// Next state answering the same question instance.
    pub fn successor(&self, idx: usize) -> Option<usize> {
        self.successor[idx]
    }

    pub fn predecessor(&self, idx: usize) -> Option<usize> {
        self.predecessor[idx]
    }

    pub fn last_of_session(&self, session: u64) -> Option<usize> {
        self.last_of_session.get(&session).copied()
    }

    /// Resolved directional decisions made in response to `request`, in
    /// resolution order. Empty for non-directional requests.
    pub fn filter_q(&self, request: Request) -> &[ResolvedDecision] {
        match request {
            Request::M => &self.decided_m,
            Request::L => &self.decided_l,
            _ => &[],
        }
    }

    /// Share of `+1` among all `+1`/`-1` rewards; `0` with no such rewards.
    pub fn global_success_rate(&self) -> f64 {
        let n = self.successes + self.failures;
        if n == 0 {
            0.0
        } else {
            self.successes as f64 / n as f64
        }
    }

    pub fn adjudicated(&self) -> (u64, u64) {
        (self.successes, self.failures)
    }

    /// Global use count per catalog operator (the start state excluded).
    pub fn use_counts(&self) -> &[u64] {
        &self.use_counts
    }

    pub fn moments(&self) -> &[RunningMoments; FEATURE_COUNT] {
        &self.moments
    }

    pub fn raw_reservoir(&self, field: usize) -> &Reservoir {
        &self.raw[field]
    }

    /// Reservoir over consecutive same-question differences `v_l - v_{l-1}`.
    pub fn delta_distribution(&self, field: usize) -> &Reservoir {
        &self.delta[field]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvConfig, StateParams};

    fn history() -> History {
        History::new(&HistoryConfig {
            reservoir_capacity: 64,
            seed: 1,
            operator_count: 23,
        })
    }

    fn rec(session: u64, q: &str, t: u32, v0: f64, request: Option<FeedbackKind>) -> InteractionRecord {
        let cfg = EnvConfig::default();
        let mut s = SurrogateState::generate(StateParams::default(), &cfg, t, q);
        s.features[0] = v0;
        InteractionRecord::from_state(session, &s, request, Some(if t == 0 { 0 } else { 1 }), false)
    }

    #[test]
    fn delta_pairs_stay_within_question() {
        let mut h = history();
        h.append(rec(1, "qa", 0, 1.0, None)).unwrap();
        h.append(rec(1, "qa", 1, 4.0, Some(FeedbackKind::More))).unwrap();
        h.append(rec(1, "qa", 2, 2.0, Some(FeedbackKind::More))).unwrap();
        h.append(rec(2, "qb", 0, 100.0, None)).unwrap();
        let d = h.delta_distribution(0);
        assert_eq!(d.items(), &[3.0, -2.0]);
        assert_eq!(h.raw_reservoir(0).seen(), 4);
        assert_eq!(h.successor(0), Some(1));
        assert_eq!(h.successor(2), None);
        assert_eq!(h.predecessor(3), None);
    }

    #[test]
    fn rejects_duplicates_and_gaps() {
        let mut h = history();
        h.append(rec(1, "qa", 0, 0.0, None)).unwrap();
        assert_eq!(
            h.append(rec(1, "qa", 0, 0.0, None)),
            Err(HistoryError::Duplicate { session: 1, t: 0 })
        );
        assert!(matches!(
            h.append(rec(1, "qa", 2, 0.0, None)),
            Err(HistoryError::NonContiguous { expected: 1, got: 2, .. })
        ));
        assert!(matches!(
            h.append(rec(9, "qz", 3, 0.0, None)),
            Err(HistoryError::NonContiguous { expected: 0, .. })
        ));
    }

    #[test]
    fn q_filter_and_success_rate() {
        let mut h = history();
        assert_eq!(h.global_success_rate(), 0.0);
        h.append(rec(1, "qa", 0, 0.0, None)).unwrap();
        let reqs = [FeedbackKind::More, FeedbackKind::Less, FeedbackKind::More, FeedbackKind::Less];
        for (i, r) in reqs.iter().enumerate() {
            h.append(rec(1, "qa", i as u32 + 1, 0.0, Some(r.clone()))).unwrap();
        }
        for (t, y) in [(1, 1), (2, 1), (3, -1)] {
            h.resolve_reward(1, t, y).unwrap();
        }
        // t=4 unresolved, so it is not part of Q_l yet.
        assert_eq!(h.filter_q(Request::M).len(), 2);
        assert_eq!(h.filter_q(Request::L).len(), 1);
        h.resolve_reward(1, 4, 0).unwrap();
        assert_eq!(h.filter_q(Request::L).len(), 2);
        assert!((h.global_success_rate() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(h.use_counts()[1], 4);
        assert!(h.resolve_reward(1, 4, 1).is_err());
    }
}
