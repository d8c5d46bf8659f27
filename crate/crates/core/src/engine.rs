//! The closed loop: questions, sessions, the per-request timestep, the
//! autouser driver, bootstrap runs and log replay.
//!
//! The engine is a single writer over the history. Each call appends
//! [`LogLine`]s to an outbox; callers drain it into a [`LogWriter`], an
//! event stream, or nowhere.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autouser::{should_terminate, Autouser, AutouserError, AutouserVerdict, SessionTrack, Termination};
use crate::config::{ConfigError, EngineConfig, Policy};
use crate::decision::{argmax_lowest, aggregate_votes, fallback_state, ucb_indices, DecisionTrace, SelectorWeights};
use crate::env::{EnvConfig, StateParams, SurrogateState, MERGE_PRECISIONS};
use crate::history::{History, HistoryConfig, HistoryError, InteractionRecord, StatsSummary};
use crate::learning::{reward_from_feedback, update_weights, FeedbackKind, LearningError, Request, UserAction};
use crate::log::{CloseReason, Event, LogError, LogLine, LogWriter, RunLog, UserSource};
use crate::operators::{apply_operator, OperatorCatalog, OperatorError, BLANK, START};
use crate::selectors::{NeighborIndex, SelectorBank, SelectorError, VoteContext};
use crate::seed;
use crate::vote::VoteMatrix;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Autouser(#[from] AutouserError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error(transparent)]
    Selector(#[from] SelectorError),
    #[error(transparent)]
    Learning(#[from] LearningError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("unknown session {0}")]
    UnknownSession(u64),
    #[error("session {0} is closed")]
    SessionClosed(u64),
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("record cap of {0} reached")]
    RecordCap(usize),
}

impl EngineError {
    /// Errors caused by configuration rather than by the run itself.
    pub fn is_config(&self) -> bool {
        matches!(self, EngineError::Config(_) | EngineError::Autouser(_))
    }

    pub fn is_io(&self) -> bool {
        matches!(self, EngineError::Log(_))
    }
}

/// A question's identity and its starting parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub params: StateParams,
}

/// Random starting parameters for the question asked in `session`.
pub fn generate_question(master_seed: u64, session: u64, _env: &EnvConfig) -> Question {
    let mut rng = seed::rng(&[seed::tag::QUESTION, master_seed, session]);
    let params = StateParams {
        refinement_depth: rng.random_range(2..=5),
        sampling_radius: rng.random_range(0.5..1.5),
        reuse_reach: rng.random_bool(0.5),
        split_question_vars_only: rng.random_bool(0.5),
        merge_iters: rng.random_range(0..=3),
        merge_precision: MERGE_PRECISIONS[rng.random_range(0..MERGE_PRECISIONS.len())],
        produce_greater_abstraction: rng.random_bool(0.5),
        disallowed_predicates: Default::default(),
        noise_draw: rng.random(),
    };
    Question {
        id: format!("q{session:06}"),
        params,
    }
}

/// A directional or manual step awaiting the next request's verdict.
#[derive(Debug, Clone)]
struct Pending {
    t: u32,
    request: Request,
    chosen: Option<usize>,
    votes: Option<VoteMatrix>,
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: u64,
    pub user: UserSource,
    pub question: Question,
    pub current: SurrogateState,
    /// Catalog index of the operator that produced `current`.
    pub last_operator: Option<usize>,
    pub last_fell_back: bool,
    pub last_trace: Option<DecisionTrace>,
    pub closed: Option<CloseReason>,
    pub successes: u32,
    pub failures: u32,
    pending: Option<Pending>,
    opened_at: Instant,
}

impl Session {
    pub fn is_open(&self) -> bool {
        self.closed.is_none()
    }

    pub fn elapsed_secs(&self) -> f64 {
        self.opened_at.elapsed().as_secs_f64()
    }
}

/// What a feedback call did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackOutcome {
    /// Timestep of the new state, when one was produced.
    pub new_t: Option<u32>,
    pub operator: Option<usize>,
    pub fell_back: bool,
    /// Reward resolved for the previous step.
    pub reward: Option<i8>,
    pub closed: bool,
    pub disallowed: Option<Vec<String>>,
}

pub struct Engine {
    cfg: EngineConfig,
    catalog: OperatorCatalog,
    bank: SelectorBank,
    index: NeighborIndex,
    history: History,
    weights: SelectorWeights,
    sessions: BTreeMap<u64, Session>,
    next_session: u64,
    seq: u64,
    steps: u64,
    outbox: Vec<LogLine>,
    /// Every resolved reward in order, including zeros.
    rewards: Vec<i8>,
    /// Entropy of each learned decision's aggregated distribution.
    entropies: Vec<f64>,
}

impl Engine {
    pub fn new(mut cfg: EngineConfig) -> Result<Self, EngineError> {
        cfg.env.master_seed = cfg.seed;
        cfg.validate()?;
        let catalog = OperatorCatalog::build();
        let bank = SelectorBank::new(&catalog, cfg.selectors.clone(), cfg.seed);
        let index = bank.new_index();
        let history = History::new(&HistoryConfig {
            reservoir_capacity: cfg.reservoir_capacity,
            seed: cfg.seed,
            operator_count: catalog.len(),
        });
        let weights = SelectorWeights::initial(bank.len());
        Ok(Self {
            cfg,
            catalog,
            bank,
            index,
            history,
            weights,
            sessions: BTreeMap::new(),
            next_session: 1,
            seq: 0,
            steps: 0,
            outbox: Vec::new(),
            rewards: Vec::new(),
            entropies: Vec::new(),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    pub fn catalog(&self) -> &OperatorCatalog {
        &self.catalog
    }

    pub fn bank(&self) -> &SelectorBank {
        &self.bank
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    pub fn weights(&self) -> &SelectorWeights {
        &self.weights
    }

    pub fn session(&self, id: u64) -> Option<&Session> {
        self.sessions.get(&id)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &Session> {
        self.sessions.values()
    }

    pub fn rewards(&self) -> &[i8] {
        &self.rewards
    }

    pub fn entropies(&self) -> &[f64] {
        &self.entropies
    }

    /// Takes the events produced since the last drain.
    pub fn drain_events(&mut self) -> Vec<LogLine> {
        std::mem::take(&mut self.outbox)
    }

    fn emit(&mut self, session: u64, event: Event) {
        self.outbox.push(LogLine {
            seq: self.seq,
            session,
            event,
        });
        self.seq += 1;
    }

    fn check_cap(&self) -> Result<(), EngineError> {
        match self.cfg.limits.max_records {
            Some(cap) if self.history.len() >= cap => Err(EngineError::RecordCap(cap)),
            _ => Ok(()),
        }
    }

    /// Opens a session on a fresh question and applies `start`.
    pub fn open_session(&mut self, user: UserSource) -> Result<u64, EngineError> {
        self.check_cap()?;
        let id = self.next_session;
        let question = generate_question(self.cfg.seed, id, &self.cfg.env);
        let state = SurrogateState::generate(question.params.clone(), &self.cfg.env, 0, &question.id);
        self.history
            .append(InteractionRecord::from_state(id, &state, None, Some(START), false))?;
        self.next_session += 1;
        self.emit(
            id,
            Event::SessionOpened {
                question_id: question.id.clone(),
                user,
                params: question.params.clone(),
            },
        );
        self.emit_step(id, &state, None, Some(START), false, None);
        self.sessions.insert(
            id,
            Session {
                id,
                user,
                question,
                current: state,
                last_operator: Some(START),
                last_fell_back: false,
                last_trace: None,
                closed: None,
                successes: 0,
                failures: 0,
                pending: None,
                opened_at: Instant::now(),
            },
        );
        Ok(id)
    }

    fn emit_step(
        &mut self,
        id: u64,
        state: &SurrogateState,
        request: Option<FeedbackKind>,
        operator: Option<usize>,
        fell_back: bool,
        trace: Option<DecisionTrace>,
    ) {
        let operator_name = operator.map(|o| self.catalog.get(o).name.clone());
        self.emit(
            id,
            Event::Step {
                t: state.timestep,
                request,
                operator,
                operator_name,
                fell_back,
                params: state.params.clone(),
                summary: StatsSummary::from(&state.stats),
                features: state.features.clone(),
                trace,
            },
        );
        let every = self.cfg.log.weight_snapshot_every;
        if every > 0 && state.timestep > 0 {
            self.steps += 1;
            if self.steps.is_multiple_of(u64::from(every)) {
                let weights = self.weights.to_vec();
                self.emit(id, Event::Weights { t: state.timestep, weights });
            }
        }
    }

    /// Checks a `u` payload against the session without changing anything.
    fn validate_action(&self, s: &Session, action: &UserAction) -> Result<(), EngineError> {
        match action {
            UserAction::ApplyOperator { operator } => match self.catalog.by_name(operator) {
                None => Err(EngineError::InvalidAction(format!("unknown operator {operator:?}"))),
                Some(op) if op.index == START => Err(OperatorError::StartNotSelectable.into()),
                Some(_) => Ok(()),
            },
            UserAction::HistoryTravel { timestep } => {
                if *timestep > s.current.timestep {
                    Err(EngineError::InvalidAction(format!(
                        "timestep {timestep} is beyond the current timestep {}",
                        s.current.timestep
                    )))
                } else {
                    Ok(())
                }
            }
            UserAction::ListDisallowed => Ok(()),
        }
    }

    /// Handles one user request for session `id`.
    ///
    /// Resolves the previous step's reward (updating weights for learned
    /// decisions), then closes the session for `b` or produces the next
    /// state. `verdict` is logged alongside autouser requests.
    pub fn feedback(
        &mut self,
        id: u64,
        f: FeedbackKind,
        verdict: Option<AutouserVerdict>,
    ) -> Result<FeedbackOutcome, EngineError> {
        let s = self.sessions.get(&id).ok_or(EngineError::UnknownSession(id))?;
        if !s.is_open() {
            return Err(EngineError::SessionClosed(id));
        }
        if let FeedbackKind::User { action } = &f {
            self.validate_action(s, action)?;
        }
        let t = s.current.timestep;
        let mut outcome = FeedbackOutcome {
            new_t: None,
            operator: None,
            fell_back: false,
            reward: None,
            closed: false,
            disallowed: None,
        };

        if let FeedbackKind::User {
            action: UserAction::ListDisallowed,
        } = &f
        {
            // A pure query: nothing advances and no reward resolves.
            let list: Vec<String> = s.current.params.disallowed_predicates.iter().cloned().collect();
            outcome.disallowed = Some(list.clone());
            self.emit(
                id,
                Event::Feedback {
                    t,
                    feedback: f,
                    verdict,
                    disallowed: Some(list),
                },
            );
            return Ok(outcome);
        }
        if !matches!(f, FeedbackKind::Break) {
            self.check_cap()?;
        }

        let mut s = self.sessions.remove(&id).expect("checked above");
        let result = self.advance(&mut s, f, verdict, &mut outcome);
        self.sessions.insert(id, s);
        result.map(|()| outcome)
    }

    fn advance(
        &mut self,
        s: &mut Session,
        f: FeedbackKind,
        verdict: Option<AutouserVerdict>,
        outcome: &mut FeedbackOutcome,
    ) -> Result<(), EngineError> {
        let id = s.id;
        let t = s.current.timestep;
        let request = f.request();
        self.emit(
            id,
            Event::Feedback {
                t,
                feedback: f.clone(),
                verdict,
                disallowed: None,
            },
        );
        self.history.record_request(id, t, request)?;

        if let Some(p) = s.pending.take() {
            let y = reward_from_feedback(p.request, Some(request))?.y;
            self.history.resolve_reward(id, p.t, y)?;
            self.rewards.push(y);
            match y {
                1 => s.successes += 1,
                -1 => s.failures += 1,
                _ => {}
            }
            let mut delta = 0.0;
            let mut updated = false;
            if let (Some(votes), Some(chosen)) = (&p.votes, p.chosen) {
                if y != 0 {
                    let before = self.weights.clone();
                    update_weights(&mut self.weights, votes, chosen, crate::learning::RewardSignal::of(y))?;
                    delta = before.iter().zip(self.weights.iter()).map(|(a, b)| (a - b).abs()).sum();
                    updated = true;
                }
            }
            outcome.reward = Some(y);
            self.emit(
                id,
                Event::Reward {
                    t: p.t,
                    y,
                    weights_updated: updated,
                    weight_delta_l1: delta,
                },
            );
        }

        match f {
            FeedbackKind::Break => {
                self.close(s, CloseReason::Exit);
                outcome.closed = true;
            }
            FeedbackKind::More | FeedbackKind::Less => {
                let (chosen, votes, trace) = self.decide(s, request)?;
                let op = self.catalog.from_selectable(chosen);
                let (next, fell_back) = self.apply(s, op)?;
                let trace = trace.map(|mut tr| {
                    tr.fell_back = fell_back;
                    tr
                });
                self.commit(s, next, f, Some(op), fell_back, trace)?;
                s.pending = Some(Pending {
                    t: t + 1,
                    request,
                    chosen: Some(chosen),
                    votes,
                });
                outcome.operator = Some(op);
                outcome.fell_back = fell_back;
                outcome.new_t = Some(t + 1);
            }
            FeedbackKind::User { ref action } => {
                let (next, op, fell_back) = match action {
                    UserAction::ApplyOperator { operator } => {
                        let op = self.catalog.by_name(operator).expect("validated").index;
                        let (next, fell_back) = self.apply(s, op)?;
                        (next, Some(op), fell_back)
                    }
                    UserAction::HistoryTravel { timestep } => {
                        let rec = self.history.record(self.history.index_of(id, *timestep)?);
                        let next =
                            SurrogateState::generate(rec.params.clone(), &self.cfg.env, t + 1, &s.question.id);
                        (next, None, false)
                    }
                    UserAction::ListDisallowed => unreachable!("handled as a query"),
                };
                self.commit(s, next, f.clone(), op, fell_back, None)?;
                s.pending = Some(Pending {
                    t: t + 1,
                    request,
                    chosen: None,
                    votes: None,
                });
                outcome.operator = op;
                outcome.fell_back = fell_back;
                outcome.new_t = Some(t + 1);
            }
        }
        Ok(())
    }

    /// Picks the selectable operator for an m/l request.
    fn decide(
        &mut self,
        s: &Session,
        request: Request,
    ) -> Result<(usize, Option<VoteMatrix>, Option<DecisionTrace>), EngineError> {
        match self.cfg.policy {
            Policy::BlankOnly => Ok((BLANK - 1, None, None)),
            Policy::Learned => {
                let ctx = VoteContext {
                    catalog: &self.catalog,
                    history: &self.history,
                    state: &s.current,
                    request,
                };
                let out = self.bank.vote(&ctx, &mut self.index)?;
                let d = aggregate_votes(&out.votes, &self.weights);
                let ucb = ucb_indices(&d, &self.history.use_counts()[1..]);
                let chosen = argmax_lowest(&ucb);
                let entropy = d.entropy();
                self.entropies.push(entropy);
                let trace = DecisionTrace {
                    d_samp: d,
                    ucb_indices: ucb,
                    chosen,
                    fell_back: false,
                    entropy,
                };
                Ok((chosen, Some(out.votes), Some(trace)))
            }
        }
    }

    /// Applies catalog operator `op`, copying the state when inapplicable.
    fn apply(&self, s: &Session, op: usize) -> Result<(SurrogateState, bool), EngineError> {
        let noise = seed::derive(&[seed::tag::NOISE, self.cfg.seed, s.id, u64::from(s.current.timestep) + 1]);
        match apply_operator(&self.catalog, op, &s.current, &self.history, &self.cfg.env, noise) {
            Ok(next) => Ok((next, false)),
            Err(OperatorError::Inapplicable(_)) => Ok((fallback_state(&s.current), true)),
            Err(e) => Err(e.into()),
        }
    }

    fn commit(
        &mut self,
        s: &mut Session,
        next: SurrogateState,
        f: FeedbackKind,
        op: Option<usize>,
        fell_back: bool,
        trace: Option<DecisionTrace>,
    ) -> Result<(), EngineError> {
        self.history
            .append(InteractionRecord::from_state(s.id, &next, Some(f.clone()), op, fell_back))?;
        self.emit_step(s.id, &next, Some(f), op, fell_back, trace.clone());
        s.current = next;
        s.last_operator = op;
        s.last_fell_back = fell_back;
        s.last_trace = trace;
        Ok(())
    }

    fn close(&mut self, s: &mut Session, reason: CloseReason) {
        s.closed = Some(reason);
        s.pending = None;
        let weights = self.weights.to_vec();
        self.emit(
            s.id,
            Event::SessionClosed {
                t: s.current.timestep,
                reason,
                weights,
            },
        );
    }

    /// Closes a session without a user exit; its last reward stays
    /// unresolved.
    pub fn force_close(&mut self, id: u64, reason: CloseReason) -> Result<(), EngineError> {
        let mut s = self.sessions.remove(&id).ok_or(EngineError::UnknownSession(id))?;
        let result = if s.is_open() {
            self.close(&mut s, reason);
            Ok(())
        } else {
            Err(EngineError::SessionClosed(id))
        };
        self.sessions.insert(id, s);
        result
    }

    /// Runs one session with the simulated user until it exits.
    pub fn run_autouser_session(&mut self) -> Result<u64, EngineError> {
        let id = self.open_session(UserSource::Autouser)?;
        let mut au = Autouser::new(self.cfg.autouser.clone(), self.cfg.seed, id)?;
        let mut track = SessionTrack::default();
        let (fp, u) = self.fingerprint_of(id);
        track.observe(&fp, u);
        let mut request = au.first_request();
        let mut verdict = None;
        let started = Instant::now();
        loop {
            if should_terminate(&track, au.config()) != Termination::Continue {
                self.feedback(id, FeedbackKind::Break, verdict.take())?;
                break;
            }
            let prev = self.sessions[&id].current.features.clone();
            match self.feedback(id, request.clone(), verdict.take()) {
                Err(EngineError::RecordCap(_)) => {
                    self.force_close(id, CloseReason::RecordCap)?;
                    break;
                }
                r => r?,
            };
            track.adjustments += 1;
            let (fp, u) = self.fingerprint_of(id);
            track.observe(&fp, u);
            if let Some(limit) = self.cfg.limits.wall_clock_secs {
                if started.elapsed().as_secs_f64() > limit {
                    self.force_close(id, CloseReason::WallClock)?;
                    break;
                }
            }
            if should_terminate(&track, au.config()) != Termination::Continue {
                continue;
            }
            let cur = &self.sessions[&id].current.features;
            let v = au.judge(&prev, cur, &self.history, request.request())?;
            request = v.response.clone();
            verdict = Some(v);
        }
        Ok(id)
    }

    fn fingerprint_of(&self, id: u64) -> (String, u32) {
        let st = &self.sessions[&id].current.stats;
        (st.fingerprint.clone(), st.unique_named)
    }
}

/// Outcome of a bootstrap run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub sessions: u64,
    pub records: usize,
    pub adjudicated: usize,
    pub success_rate: f64,
    pub trailing_100_success_rate: Option<f64>,
    pub mean_entropy_first_500: Option<f64>,
    pub mean_entropy_last_500: Option<f64>,
}

/// Success rate over the last `window` rewards that were `+1` or `-1`.
pub fn trailing_success_rate(rewards: &[i8], window: usize) -> Option<f64> {
    let adjudicated: Vec<i8> = rewards.iter().copied().filter(|&y| y != 0).collect();
    if adjudicated.is_empty() {
        return None;
    }
    let tail = &adjudicated[adjudicated.len().saturating_sub(window)..];
    Some(tail.iter().filter(|&&y| y == 1).count() as f64 / tail.len() as f64)
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

impl Engine {
    pub fn summary(&self) -> RunSummary {
        let adjudicated = self.rewards.iter().filter(|&&y| y != 0).count();
        let e = &self.entropies;
        RunSummary {
            sessions: self.next_session - 1,
            records: self.history.len(),
            adjudicated,
            success_rate: self.history.global_success_rate(),
            trailing_100_success_rate: trailing_success_rate(&self.rewards, 100),
            mean_entropy_first_500: mean(&e[..e.len().min(500)]),
            mean_entropy_last_500: mean(&e[e.len().saturating_sub(500)..]),
        }
    }

    /// Writes `weights.csv`: selector id, family, description, weight.
    pub fn write_weights_csv(&self, path: &Path) -> Result<(), EngineError> {
        let io = |source| LogError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
        w.write_record(["selector", "family", "kind", "weight"]).map_err(|e| io(e.into()))?;
        for (spec, weight) in self.bank.specs().iter().zip(self.weights.iter()) {
            w.write_record([
                spec.id.to_string(),
                spec.kind.family().to_string(),
                spec.kind.to_string(),
                weight.to_string(),
            ])
            .map_err(|e| io(e.into()))?;
        }
        w.flush().map_err(io)?;
        Ok(())
    }
}

/// Runs `sessions` autouser sessions. With `out`, logs go to that run
/// directory together with `weights.csv` and `summary.json`.
pub fn run_bootstrap(cfg: EngineConfig, sessions: u64, out: Option<&Path>) -> Result<Engine, EngineError> {
    let mut engine = Engine::new(cfg)?;
    let mut writer = match out {
        Some(dir) => Some(LogWriter::create(dir, engine.config())?),
        None => None,
    };
    for _ in 0..sessions {
        engine.run_autouser_session()?;
        let lines = engine.drain_events();
        if let Some(w) = writer.as_mut() {
            w.write_all(&lines)?;
        }
    }
    if let (Some(w), Some(dir)) = (writer.as_mut(), out) {
        w.flush()?;
        engine.write_weights_csv(&dir.join("weights.csv"))?;
        let path = dir.join("summary.json");
        let text = serde_json::to_string_pretty(&engine.summary()).expect("summary serializes");
        std::fs::write(&path, text + "\n").map_err(|source| LogError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(engine)
}

/// Result of re-executing a log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub events: usize,
    pub sessions: usize,
    pub records: usize,
    /// `seq` of the first event the re-execution disagrees with.
    pub first_mismatch: Option<u64>,
    pub final_weights: Vec<f64>,
}

impl ReplayReport {
    pub fn matches(&self) -> bool {
        self.first_mismatch.is_none()
    }
}

/// Feeds the logged user requests to a fresh engine built from the logged
/// configuration and checks every event it emits against the log.
/// `until_session` stops after that session's last event.
pub fn replay(run: &RunLog, until_session: Option<u64>) -> Result<(Engine, ReplayReport), EngineError> {
    let mut engine = Engine::new(run.config.clone())?;
    let end = match until_session {
        Some(s) => run
            .lines
            .iter()
            .rposition(|l| l.session == s)
            .map_or(0, |i| i + 1),
        None => run.lines.len(),
    };
    let logged = &run.lines[..end];
    let mut produced: Vec<LogLine> = Vec::with_capacity(logged.len());
    for line in logged {
        match &line.event {
            Event::SessionOpened { user, .. } => {
                engine.open_session(*user)?;
            }
            Event::Feedback { feedback, verdict, .. } => {
                engine.feedback(line.session, feedback.clone(), verdict.clone())?;
            }
            Event::SessionClosed { reason, .. } if *reason != CloseReason::Exit => {
                engine.force_close(line.session, *reason)?;
            }
            _ => {}
        }
        produced.extend(engine.drain_events());
    }
    let text = |l: &LogLine| serde_json::to_string(l).expect("log line serializes");
    let first_mismatch = logged
        .iter()
        .zip(produced.iter().map(Some).chain(std::iter::repeat(None)))
        .find(|(a, b)| b.is_none_or(|b| text(a) != text(b)))
        .map(|(a, _)| a.seq)
        .or_else(|| (produced.len() > logged.len()).then(|| produced[logged.len()].seq));
    let report = ReplayReport {
        events: logged.len(),
        sessions: engine.sessions.len(),
        records: engine.history.len(),
        first_mismatch,
        final_weights: engine.weights.to_vec(),
    };
    Ok((engine, report))
}
