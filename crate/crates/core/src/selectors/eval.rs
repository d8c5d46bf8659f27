//! Evaluation of the selector bank against a history snapshot.
//!
//! Every history-informed selector with the same distance (one field or
//! one projection) shares a neighbour ranking; alpha only changes the decay
//! applied to it. Rankings come from ordered indexes over the scalar each
//! distance compares, so a query walks outwards from the current value
//! instead of sorting the whole history.

use std::cmp::Ordering;
use std::collections::btree_set::{self, BTreeSet};
use std::collections::HashMap;
use std::iter::Peekable;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    applicability_vote, build_census, dirac_vote, history_informed_vote, knn_vote, projection_directions,
    Featurization, SelectorConfig, SelectorError, SelectorKind, SelectorSpec, VoteOutcome, STD_EPS,
};
use crate::env::{SurrogateState, FEATURE_COUNT};
use crate::history::History;
use crate::learning::Request;
use crate::operators::OperatorCatalog;
use crate::stats::ecdf_sorted;
use crate::vote::VoteDistribution;

/// When the featurization snapshot (sorted reservoirs, standardization
/// moments) is rebuilt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EcdfRefresh {
    /// Whenever the history changed. Exact, quadratic over a run.
    Always,
    /// Once the history grew by `max(min_records, len / divisor)` records
    /// since the last snapshot.
    Geometric { min_records: usize, divisor: usize },
}

impl Default for EcdfRefresh {
    fn default() -> Self {
        EcdfRefresh::Geometric {
            min_records: 8,
            divisor: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum DistanceKey {
    Field(usize),
    Projection(usize, Featurization),
}

fn key_of(kind: &SelectorKind) -> Option<DistanceKey> {
    match *kind {
        SelectorKind::SingleFeature { field, .. } | SelectorKind::Knn { field, .. } => Some(DistanceKey::Field(field)),
        SelectorKind::RandomProjection {
            direction,
            featurization,
            ..
        } => Some(DistanceKey::Projection(direction, featurization)),
        _ => None,
    }
}

/// Index entry: scalar value, then newer records first among equal values.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    value: f64,
    record: u32,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.value
            .total_cmp(&other.value)
            .then(other.record.cmp(&self.record))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn entry(value: f64, record: usize) -> Entry {
    // `+ 0.0` folds -0.0 into 0.0 so the total order matches `==`.
    Entry {
        value: value + 0.0,
        record: record as u32,
    }
}

/// Smallest entry carrying `value`.
fn run_start(value: f64) -> Entry {
    Entry { value, record: u32::MAX }
}

/// Last entry carrying `value`.
fn run_end(value: f64) -> Entry {
    Entry { value, record: 0 }
}

/// Entries sharing one value, newest first.
enum RunEntries<'a> {
    One(Option<Entry>),
    Many(Peekable<btree_set::Range<'a, Entry>>),
}

/// Entries sharing one value, newest first, at a common distance.
struct Run<'a> {
    dist: f64,
    entries: RunEntries<'a>,
}

impl Run<'_> {
    fn peek(&mut self) -> Option<&Entry> {
        match &mut self.entries {
            RunEntries::One(e) => e.as_ref(),
            RunEntries::Many(it) => it.peek().copied(),
        }
    }

    fn next(&mut self) -> Option<Entry> {
        match &mut self.entries {
            RunEntries::One(e) => e.take(),
            RunEntries::Many(it) => it.next().copied(),
        }
    }
}

/// Runs of equal values walking away from `c` in one direction. A single
/// cursor serves isolated values; only repeated values cost a seek.
struct Runs<'a> {
    set: &'a BTreeSet<Entry>,
    c: f64,
    upward: bool,
    cursor: btree_set::Range<'a, Entry>,
    /// Next entry in walking order.
    head: Option<Entry>,
}

impl<'a> Runs<'a> {
    fn new(set: &'a BTreeSet<Entry>, c: f64, upward: bool) -> Self {
        let cursor = if upward {
            set.range(run_start(c)..)
        } else {
            set.range(..run_start(c))
        };
        let mut runs = Self {
            set,
            c,
            upward,
            cursor,
            head: None,
        };
        runs.head = runs.advance();
        runs
    }

    fn advance(&mut self) -> Option<Entry> {
        if self.upward {
            self.cursor.next().copied()
        } else {
            self.cursor.next_back().copied()
        }
    }

    fn peek_dist(&self) -> Option<f64> {
        self.head
            .map(|e| if self.upward { e.value - self.c } else { self.c - e.value })
    }

    fn pop(&mut self) -> Option<Run<'a>> {
        let dist = self.peek_dist()?;
        let first = self.head?;
        let v = first.value;
        let after = self.advance();
        if after.is_none_or(|e| e.value != v) {
            self.head = after;
            return Some(Run {
                dist,
                entries: RunEntries::One(Some(first)),
            });
        }
        // A repeated value: read it newest first and skip past it.
        self.cursor = if self.upward {
            self.set
                .range((std::ops::Bound::Excluded(run_end(v)), std::ops::Bound::Unbounded))
        } else {
            self.set.range(..run_start(v))
        };
        self.head = self.advance();
        Some(Run {
            dist,
            entries: RunEntries::Many(self.set.range(run_start(v)..=run_end(v)).peekable()),
        })
    }
}

/// Up to `limit` entries nearest to `c`, ordered by the computed distance
/// `|value - c|` and then newer first.
fn nearest(set: &BTreeSet<Entry>, c: f64, limit: usize) -> Vec<Entry> {
    let c = c + 0.0;
    let mut sides = [Runs::new(set, c, true), Runs::new(set, c, false)];
    let mut out = Vec::with_capacity(limit.min(set.len()));
    let mut group: Vec<Run<'_>> = Vec::new();
    while out.len() < limit {
        let Some(d) = sides
            .iter()
            .filter_map(Runs::peek_dist)
            .min_by(f64::total_cmp)
        else {
            break;
        };
        // Distinct values can round to the same distance; merge them all.
        group.clear();
        for side in &mut sides {
            while side.peek_dist() == Some(d) {
                group.extend(side.pop());
            }
        }
        if let [run] = group.as_mut_slice() {
            while out.len() < limit {
                let Some(e) = run.next() else { break };
                out.push(e);
            }
            continue;
        }
        while out.len() < limit {
            let best = group
                .iter_mut()
                .filter_map(|r| r.peek().map(|e| e.record))
                .max();
            let Some(best) = best else { break };
            let at = group
                .iter_mut()
                .position(|r| r.peek().is_some_and(|e| e.record == best))
                .expect("run holding the maximum");
            let run = &mut group[at];
            debug_assert_eq!(run.dist, d);
            out.push(run.next().expect("peeked"));
        }
    }
    out
}

/// Incrementally maintained neighbour indexes plus the featurization
/// snapshot behind the projection distances.
#[derive(Debug, Clone)]
pub struct NeighborIndex {
    policy: EcdfRefresh,
    directions: Vec<[f64; FEATURE_COUNT]>,
    keys: Vec<DistanceKey>,
    sorted: Vec<Vec<f64>>,
    versions: [u64; FEATURE_COUNT],
    std_weights: Vec<[f64; FEATURE_COUNT]>,
    snapshot_len: Option<usize>,
    /// Per record: the ECDF projections then the standardized ones.
    projections: Vec<f64>,
    /// `[m, l]` x key slot.
    sets: [Vec<BTreeSet<Entry>>; 2],
    indexed: [usize; 2],
    /// Per record: selectable operator and reward, for resolved decisions.
    outcome: Vec<(u8, i8)>,
}

fn request_slot(r: Request) -> Option<usize> {
    match r {
        Request::M => Some(0),
        Request::L => Some(1),
        _ => None,
    }
}

impl NeighborIndex {
    fn new(directions: Vec<[f64; FEATURE_COUNT]>, keys: Vec<DistanceKey>, policy: EcdfRefresh) -> Self {
        let sets = || vec![BTreeSet::new(); keys.len()];
        Self {
            policy,
            std_weights: vec![[0.0; FEATURE_COUNT]; directions.len()],
            directions,
            sets: [sets(), sets()],
            keys,
            sorted: vec![Vec::new(); FEATURE_COUNT],
            versions: [0; FEATURE_COUNT],
            snapshot_len: None,
            projections: Vec::new(),
            indexed: [0, 0],
            outcome: Vec::new(),
        }
    }

    fn stale(&self, history: &History) -> bool {
        let Some(last) = self.snapshot_len else {
            return true;
        };
        if history.len() == last {
            return false;
        }
        match self.policy {
            EcdfRefresh::Always => true,
            EcdfRefresh::Geometric { min_records, divisor } => {
                history.len() >= last + min_records.max(last / divisor.max(1))
            }
        }
    }

    fn snapshot(&mut self, history: &History) {
        for j in 0..FEATURE_COUNT {
            let r = history.raw_reservoir(j);
            if r.version() != self.versions[j] || self.snapshot_len.is_none() {
                self.sorted[j] = r.sorted();
                self.versions[j] = r.version();
            }
        }
        let moments = history.moments();
        for (w, u) in self.std_weights.iter_mut().zip(&self.directions) {
            for j in 0..FEATURE_COUNT {
                let std = moments[j].std();
                w[j] = if moments[j].count >= 2 && std >= STD_EPS { u[j] / std } else { 0.0 };
            }
        }
        self.snapshot_len = Some(history.len());
        self.projections.clear();
    }

    /// Brings the snapshot and every index up to date with `history`.
    pub fn sync(&mut self, history: &History) {
        let rebuild = self.stale(history);
        if rebuild {
            self.snapshot(history);
        }
        let width = 2 * self.directions.len();
        for idx in self.projections.len() / width.max(1)..history.len() {
            let p = self.project(&history.record(idx).features);
            self.projections.extend(p);
        }
        self.outcome.resize(history.len(), (0, 0));
        if rebuild {
            // Projection values moved; re-insert every decision for them.
            for slot in 0..2 {
                for (s, key) in self.keys.iter().enumerate() {
                    if matches!(key, DistanceKey::Projection(..)) {
                        self.sets[slot][s].clear();
                    }
                }
                let req = [Request::M, Request::L][slot];
                for d in &history.filter_q(req)[..self.indexed[slot]] {
                    for s in 0..self.keys.len() {
                        if let DistanceKey::Projection(..) = self.keys[s] {
                            let v = self.value(self.keys[s], history, d.pre);
                            self.sets[slot][s].insert(entry(v, d.record));
                        }
                    }
                }
            }
        }
        for (slot, req) in [Request::M, Request::L].into_iter().enumerate() {
            let q = history.filter_q(req);
            for d in &q[self.indexed[slot]..] {
                let op = u8::try_from(d.operator - 1).expect("operator index fits u8");
                self.outcome[d.record] = (op, d.reward);
                for s in 0..self.keys.len() {
                    let v = self.value(self.keys[s], history, d.pre);
                    self.sets[slot][s].insert(entry(v, d.record));
                }
            }
            self.indexed[slot] = q.len();
        }
    }

    fn value(&self, key: DistanceKey, history: &History, record: usize) -> f64 {
        let d = self.directions.len();
        match key {
            DistanceKey::Field(j) => history.record(record).features[j],
            DistanceKey::Projection(v, Featurization::Ecdf) => self.projections[record * 2 * d + v],
            DistanceKey::Projection(v, Featurization::Standardize) => self.projections[record * 2 * d + d + v],
        }
    }

    /// ECDF of `x` within the snapshot of `field`; 0.5 when empty.
    pub fn ecdf(&self, field: usize, x: f64) -> f64 {
        ecdf_sorted(&self.sorted[field], x).unwrap_or(0.5)
    }

    /// ECDF projections for every direction, then standardized ones.
    fn project(&self, x: &[f64]) -> Vec<f64> {
        let phi: Vec<f64> = (0..FEATURE_COUNT).map(|j| self.ecdf(j, x[j])).collect();
        let ecdf = self.directions.iter().map(|u| dot(u, &phi));
        let std = self.std_weights.iter().map(|w| dot(w, x));
        ecdf.chain(std).collect()
    }

    fn query(&self, key: DistanceKey, cur: &[f64], projected: &[f64]) -> f64 {
        let d = self.directions.len();
        match key {
            DistanceKey::Field(j) => cur[j],
            DistanceKey::Projection(v, Featurization::Ecdf) => projected[v],
            DistanceKey::Projection(v, Featurization::Standardize) => projected[d + v],
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Read-only inputs for one decision.
#[derive(Clone, Copy)]
pub struct VoteContext<'a> {
    pub catalog: &'a OperatorCatalog,
    pub history: &'a History,
    pub state: &'a SurrogateState,
    pub request: Request,
}

/// The configured selector census plus its projection directions.
#[derive(Debug, Clone)]
pub struct SelectorBank {
    specs: Vec<SelectorSpec>,
    directions: Vec<[f64; FEATURE_COUNT]>,
    keys: Vec<DistanceKey>,
    cfg: SelectorConfig,
}

/// `(selectable operator, reward)` nearest first.
type Ranking = Vec<(usize, i8)>;

impl SelectorBank {
    pub fn new(catalog: &OperatorCatalog, cfg: SelectorConfig, master_seed: u64) -> Self {
        let specs = build_census(catalog, &cfg);
        let mut keys: Vec<DistanceKey> = specs.iter().filter_map(|s| key_of(&s.kind)).collect();
        keys.sort();
        keys.dedup();
        Self {
            directions: projection_directions(cfg.projection_count, master_seed),
            specs,
            keys,
            cfg,
        }
    }

    pub fn specs(&self) -> &[SelectorSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn directions(&self) -> &[[f64; FEATURE_COUNT]] {
        &self.directions
    }

    pub fn config(&self) -> &SelectorConfig {
        &self.cfg
    }

    pub fn new_index(&self) -> NeighborIndex {
        NeighborIndex::new(self.directions.clone(), self.keys.clone(), self.cfg.ecdf_refresh)
    }

    fn cutoff(&self) -> usize {
        if self.cfg.rank_cutoff == 0 {
            return usize::MAX;
        }
        let z = self.cfg.knn_z.iter().copied().max().unwrap_or(0);
        self.cfg.rank_cutoff.max(z)
    }

    /// Every selector's vote for `ctx`. Syncs `index` with the history first.
    pub fn vote(&self, ctx: &VoteContext<'_>, index: &mut NeighborIndex) -> Result<VoteOutcome, SelectorError> {
        index.sync(ctx.history);
        let index = &*index;
        let k = ctx.catalog.selectable_count();
        super::run_voting_rounds(&self.specs, k, |batch| {
            let rankings = self.rankings(ctx, index);
            batch
                .iter()
                .map(|s| {
                    Ok(match &s.kind {
                        SelectorKind::Uniform => VoteDistribution::uniform(k),
                        SelectorKind::Dirac { operator } => dirac_vote(*operator, k)?,
                        SelectorKind::Applicability { operators } => {
                            applicability_vote(operators, ctx.state, ctx.catalog)
                        }
                        SelectorKind::SingleFeature { alpha, .. } | SelectorKind::RandomProjection { alpha, .. } => {
                            let r = &rankings[&key_of(&s.kind).expect("history selector")];
                            history_informed_vote(r.iter().copied(), *alpha, k)
                        }
                        SelectorKind::Knn { z, .. } => {
                            let r = &rankings[&key_of(&s.kind).expect("history selector")];
                            knn_vote(r.iter().copied(), *z, k)
                        }
                        SelectorKind::Product { .. } => unreachable!("products are derived"),
                    })
                })
                .collect()
        })
    }

    fn rankings(&self, ctx: &VoteContext<'_>, index: &NeighborIndex) -> HashMap<DistanceKey, Ranking> {
        let Some(slot) = request_slot(ctx.request) else {
            return self.keys.iter().map(|&k| (k, Vec::new())).collect();
        };
        let cur = &ctx.state.features;
        let projected = index.project(cur);
        let cutoff = self.cutoff();
        let one = |(s, key): (usize, &DistanceKey)| -> (DistanceKey, Ranking) {
            let c = index.query(*key, cur, &projected);
            let ranked = nearest(&index.sets[slot][s], c, cutoff)
                .into_iter()
                .map(|e| {
                    let (op, y) = index.outcome[e.record as usize];
                    (usize::from(op), y)
                })
                .collect();
            (*key, ranked)
        };
        if self.cfg.parallel {
            self.keys.par_iter().enumerate().map(one).collect()
        } else {
            self.keys.iter().enumerate().map(one).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::env::{EnvConfig, StateParams};
    use crate::history::{HistoryConfig, InteractionRecord, ResolvedDecision};
    use crate::learning::FeedbackKind;
    use crate::selectors::{
        featurize_ecdf, featurize_standardize, random_projection_distance, rank_neighbors, single_feature_distance,
    };

    #[test]
    fn nearest_matches_full_sort_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let n = rng.random_range(0..60);
            let values: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(-4i32..5)) * 0.5).collect();
            let set: BTreeSet<Entry> = values.iter().enumerate().map(|(i, &v)| entry(v, i)).collect();
            let c = f64::from(rng.random_range(-10i32..11)) * 0.25;
            let limit = rng.random_range(1..70);
            let mut want: Vec<(f64, usize)> = values.iter().map(|v| (v - c).abs()).zip(0..).collect();
            want.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
            want.truncate(limit);
            let got: Vec<usize> = nearest(&set, c, limit).iter().map(|e| e.record as usize).collect();
            let want: Vec<usize> = want.iter().map(|w| w.1).collect();
            assert_eq!(got, want, "c={c} values={values:?}");
        }
    }

    #[test]
    fn nearest_matches_full_sort_on_mixed_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let n = rng.random_range(0..120);
            let mut values: Vec<f64> = Vec::with_capacity(n);
            for _ in 0..n {
                let v = match rng.random_range(0..3) {
                    0 => rng.random_range(-1.0..1.0),
                    1 if !values.is_empty() => values[rng.random_range(0..values.len())],
                    _ => f64::from(rng.random_range(-3i32..4)) * 0.1,
                };
                values.push(v);
            }
            let set: BTreeSet<Entry> = values.iter().enumerate().map(|(i, &v)| entry(v, i)).collect();
            let c = if rng.random_bool(0.5) && n > 0 {
                values[rng.random_range(0..n)]
            } else {
                rng.random_range(-1.2..1.2)
            };
            let limit = rng.random_range(1..130);
            let mut want: Vec<(f64, usize)> = values.iter().map(|v| (v - c).abs()).zip(0..).collect();
            want.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
            want.truncate(limit);
            let got: Vec<usize> = nearest(&set, c, limit).iter().map(|e| e.record as usize).collect();
            let want: Vec<usize> = want.iter().map(|w| w.1).collect();
            assert_eq!(got, want);
        }
    }

    /// A single long session of random directional steps with rewards.
    fn random_history(steps: u32, seed: u64) -> (History, SurrogateState) {
        let cfg = EnvConfig::default();
        let mut h = History::new(&HistoryConfig {
            reservoir_capacity: 64,
            seed,
            operator_count: 23,
        });
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = StateParams::default();
        let mut state = SurrogateState::generate(params.clone(), &cfg, 0, "q0");
        h.append(InteractionRecord::from_state(1, &state, None, Some(0), false)).unwrap();
        for t in 1..=steps {
            let req = if rng.random_bool(0.5) { FeedbackKind::More } else { FeedbackKind::Less };
            h.record_request(1, t - 1, req.request()).unwrap();
            if t > 1 {
                let y = if rng.random_bool(0.5) { 1 } else { -1 };
                h.resolve_reward(1, t - 1, y).unwrap();
            }
            // Occasional repeats exercise exact distance ties.
            if !rng.random_bool(0.2) {
                params.refinement_depth = rng.random_range(1..=6);
                params.sampling_radius = rng.random_range(0.1..2.0);
                params.noise_draw = rng.random();
            }
            state = SurrogateState::generate(params.clone(), &cfg, t, "q0");
            let op = rng.random_range(1..23);
            h.append(InteractionRecord::from_state(1, &state, Some(req), Some(op), false))
                .unwrap();
        }
        (h, state)
    }

    /// Straight transcription of the selector definitions, no caching.
    fn reference_vote(
        kind: &SelectorKind,
        h: &History,
        state: &SurrogateState,
        req: Request,
        dirs: &[[f64; FEATURE_COUNT]],
    ) -> VoteDistribution {
        let q = h.filter_q(req);
        let cur = &state.features;
        let dist = |d: &ResolvedDecision| -> f64 {
            let pre = &h.record(d.pre).features;
            match *kind {
                SelectorKind::SingleFeature { field, .. } => single_feature_distance(pre, cur, field),
                SelectorKind::RandomProjection {
                    direction,
                    featurization,
                    ..
                } => random_projection_distance(pre, cur, &dirs[direction], |j, x| match featurization {
                    Featurization::Standardize => featurize_standardize(x, &h.moments()[j]),
                    Featurization::Ecdf => featurize_ecdf(x, h.raw_reservoir(j)),
                }),
                _ => unreachable!(),
            }
        };
        let ranked = rank_neighbors(q, dist);
        let alpha = match *kind {
            SelectorKind::SingleFeature { alpha, .. } | SelectorKind::RandomProjection { alpha, .. } => alpha,
            _ => unreachable!(),
        };
        history_informed_vote(ranked.iter().map(|(d, _)| (d.operator - 1, d.reward)), alpha, 22)
    }

    fn ctx<'a>(c: &'a OperatorCatalog, h: &'a History, s: &'a SurrogateState, r: Request) -> VoteContext<'a> {
        VoteContext {
            catalog: c,
            history: h,
            state: s,
            request: r,
        }
    }

    #[test]
    fn indexed_bank_matches_reference() {
        let catalog = OperatorCatalog::build();
        let cfg = SelectorConfig {
            rank_cutoff: 0,
            ecdf_refresh: EcdfRefresh::Always,
            ..SelectorConfig::default()
        };
        let bank = SelectorBank::new(&catalog, cfg, 42);
        let mut index = bank.new_index();
        // Sync at several history lengths so incremental inserts and
        // rebuilds are both exercised.
        for (steps, seed) in [(40, 5), (120, 5)] {
            let (h, state) = random_history(steps, seed);
            let mut fresh = bank.new_index();
            let idx = if steps == 40 { &mut index } else { &mut fresh };
            for req in [Request::M, Request::L] {
                let out = bank.vote(&ctx(&catalog, &h, &state, req), idx).unwrap();
                assert_eq!(out.rounds, 2);
                for s in bank.specs() {
                    let row = out.votes.row(s.id);
                    assert!(VoteDistribution::from_masses(row.to_vec()).is_valid());
                    if s.kind.is_history_informed() {
                        let want = reference_vote(&s.kind, &h, &state, req, bank.directions());
                        for (a, b) in row.iter().zip(want.masses()) {
                            assert!((a - b).abs() < 1e-9, "{}: {row:?} vs {want:?}", s.kind);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn incremental_sync_equals_fresh_index() {
        let catalog = OperatorCatalog::build();
        let bank = SelectorBank::new(&catalog, SelectorConfig::default(), 7);
        let (h, state) = random_history(150, 2);
        // Same history, but one index has seen every intermediate length.
        let mut grown = bank.new_index();
        let mut partial = History::new(&HistoryConfig {
            reservoir_capacity: 64,
            seed: 2,
            operator_count: 23,
        });
        for (i, rec) in h.records().iter().enumerate() {
            partial.append(rec.clone()).unwrap();
            if let Some(r) = h.request_after(i) {
                partial.record_request(1, rec.t, r).unwrap();
            }
            if i >= 1 {
                if let Some(y) = h.reward(i - 1) {
                    partial.resolve_reward(1, h.record(i - 1).t, y).unwrap();
                }
            }
            grown.sync(&partial);
        }
        if let Some(y) = h.reward(h.len() - 1) {
            partial.resolve_reward(1, h.record(h.len() - 1).t, y).unwrap();
        }
        let a = bank.vote(&ctx(&catalog, &partial, &state, Request::M), &mut grown).unwrap();
        let mut fresh = bank.new_index();
        let b = bank.vote(&ctx(&catalog, &partial, &state, Request::M), &mut fresh).unwrap();
        for s in bank.specs().iter().filter(|s| matches!(s.kind, SelectorKind::SingleFeature { .. })) {
            assert_eq!(a.votes.row(s.id), b.votes.row(s.id));
        }
    }

    #[test]
    fn truncation_barely_moves_votes() {
        let catalog = OperatorCatalog::build();
        let (h, state) = random_history(300, 9);
        let bank = |rank_cutoff| {
            SelectorBank::new(
                &catalog,
                SelectorConfig {
                    rank_cutoff,
                    ..SelectorConfig::default()
                },
                42,
            )
        };
        let (exact, cut) = (bank(0), bank(200));
        let c = ctx(&catalog, &h, &state, Request::M);
        let a = exact.vote(&c, &mut exact.new_index()).unwrap();
        let b = cut.vote(&c, &mut cut.new_index()).unwrap();
        let mut worst: f64 = 0.0;
        for i in 0..exact.len() {
            for (x, y) in a.votes.row(i).iter().zip(b.votes.row(i)) {
                worst = worst.max((x - y).abs());
            }
        }
        assert!(worst < 1e-6, "max deviation {worst}");
    }

    #[test]
    fn parallel_matches_serial() {
        let catalog = OperatorCatalog::build();
        let (h, state) = random_history(80, 3);
        let serial = SelectorBank::new(&catalog, SelectorConfig::default(), 1);
        let parallel = SelectorBank::new(
            &catalog,
            SelectorConfig {
                parallel: true,
                ..SelectorConfig::default()
            },
            1,
        );
        let c = ctx(&catalog, &h, &state, Request::L);
        assert_eq!(
            serial.vote(&c, &mut serial.new_index()).unwrap(),
            parallel.vote(&c, &mut parallel.new_index()).unwrap()
        );
    }

    #[test]
    fn empty_history_gives_uniform_history_votes() {
        let catalog = OperatorCatalog::build();
        let bank = SelectorBank::new(&catalog, SelectorConfig::default(), 1);
        let h = History::new(&HistoryConfig {
            reservoir_capacity: 8,
            seed: 0,
            operator_count: 23,
        });
        let state = SurrogateState::generate(StateParams::default(), &EnvConfig::default(), 0, "q");
        let out = bank.vote(&ctx(&catalog, &h, &state, Request::M), &mut bank.new_index()).unwrap();
        let u = VoteDistribution::uniform(22);
        for s in bank.specs().iter().filter(|s| s.kind.is_history_informed()) {
            assert_eq!(out.votes.row(s.id), u.masses());
        }
    }
}
