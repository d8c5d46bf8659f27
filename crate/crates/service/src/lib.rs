//! HTTP adapter over the engine so a person can take the autouser's place.
//!
//! Every route is a thin wrapper: the engine produces the same log lines
//! whether it is driven here or directly. Sessions share one engine, so
//! interactive steering continues from whatever the engine already learned.
//!
//! Routes (JSON unless noted):
//!
//! | method | path | body | success | errors |
//! |---|---|---|---|---|
//! | POST | `/sessions` | [`CreateSession`] | [`SessionView`] | 422 invalid settings |
//! | GET | `/sessions/{id}` | | [`SessionView`] | 404 |
//! | POST | `/sessions/{id}/feedback` | `FeedbackKind` | [`FeedbackResponse`] | 400, 404, 409 |
//! | GET | `/sessions/{id}/metrics` | | metrics `Report` | 404 |
//! | GET | `/sessions/{id}/events` | | server-sent events | 404 |
//! | GET | `/catalog` | | operator list | |
//! | GET | `/selectors` | | selector specs | |

use std::collections::{HashMap, HashSet};
use std::convert::Infallible;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use opsteer_core::autouser::AutouserConfig;
use opsteer_core::engine::{Engine, EngineError, FeedbackOutcome};
use opsteer_core::env::FEATURE_NAMES;
use opsteer_core::learning::FeedbackKind;
use opsteer_core::log::{CloseReason, Event, LogLine, LogWriter, UserSource};
use opsteer_core::metrics::{event_tag, Report, DEFAULT_WINDOW};

/// Settings accepted when opening a session. The autouser fields describe
/// the simulated user that an interactive session would be compared with
/// and are validated the same way.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CreateSession {
    pub k_au: Option<usize>,
    pub max_adjustments: Option<u32>,
}

impl CreateSession {
    fn validate(&self, base: &AutouserConfig) -> Result<(), String> {
        let mut cfg = base.clone();
        if let Some(k) = self.k_au {
            cfg.k_au = k;
        }
        if let Some(m) = self.max_adjustments {
            cfg.max_adjustments = m;
        }
        cfg.validate().map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptionView {
    pub fingerprint: String,
    pub unique_named: u32,
    pub n_boxes: u64,
    pub conjuncts: u32,
    pub disjuncts: u32,
    pub box_ranges: u32,
    pub vol_named_total: f64,
    pub vol_box_total: f64,
    pub box_coverage: f64,
    /// Named predicates with their multiplicities.
    pub named_predicates: Vec<(String, u32)>,
    pub features: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub selector: usize,
    pub kind: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: u64,
    pub question_id: String,
    pub user: UserSource,
    pub closed: bool,
    pub close_reason: Option<CloseReason>,
    pub t: u32,
    pub last_operator: Option<String>,
    pub last_fell_back: bool,
    pub description: DescriptionView,
    pub top_weights: Vec<WeightEntry>,
    pub bottom_weights: Vec<WeightEntry>,
    pub last_d_samp: Option<Vec<f64>>,
    pub session_success_rate: Option<f64>,
    pub global_success_rate: f64,
    pub allowed_actions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackResponse {
    pub outcome: FeedbackOutcome,
    pub view: SessionView,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorBody { error: self.1 })).into_response()
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let status = match &e {
            EngineError::UnknownSession(_) => StatusCode::NOT_FOUND,
            EngineError::SessionClosed(_) => StatusCode::CONFLICT,
            EngineError::InvalidAction(_) | EngineError::Operator(_) => StatusCode::BAD_REQUEST,
            EngineError::RecordCap(_) => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

struct Shared {
    engine: Engine,
    writer: Option<LogWriter>,
    /// Lines of sessions opened through this service, for streaming and
    /// metrics.
    events: HashMap<u64, Vec<LogLine>>,
    in_flight: HashSet<u64>,
}

#[derive(Clone)]
pub struct AppState {
    shared: Arc<Mutex<Shared>>,
    tx: broadcast::Sender<LogLine>,
}

impl AppState {
    /// Wraps `engine`; with `writer`, every line the service produces is
    /// also appended to that run directory.
    pub fn new(mut engine: Engine, writer: Option<LogWriter>) -> Self {
        engine.drain_events();
        let (tx, _) = broadcast::channel(4096);
        Self {
            shared: Arc::new(Mutex::new(Shared {
                engine,
                writer,
                events: HashMap::new(),
                in_flight: HashSet::new(),
            })),
            tx,
        }
    }

    fn lock(&self) -> MutexGuard<'_, Shared> {
        self.shared.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// All lines produced through the service so far, in order.
    pub fn lines(&self) -> Vec<LogLine> {
        let g = self.lock();
        let mut all: Vec<LogLine> = g.events.values().flatten().cloned().collect();
        all.sort_by_key(|l| l.seq);
        all
    }

    /// Moves the engine's pending lines into the buffers, the log and the
    /// broadcast channel.
    fn publish(&self, g: &mut Shared) -> Result<(), ApiError> {
        let lines = g.engine.drain_events();
        if let Some(w) = g.writer.as_mut() {
            w.write_all(&lines)
                .and_then(|()| w.flush())
                .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        }
        for l in lines {
            g.events.entry(l.session).or_default().push(l.clone());
            // Nobody listening is fine.
            let _ = self.tx.send(l);
        }
        Ok(())
    }
}

fn view(engine: &Engine, id: u64) -> Result<SessionView, ApiError> {
    let s = engine
        .session(id)
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown session {id}")))?;
    let st = &s.current.stats;
    let specs = engine.bank().specs();
    let w = engine.weights();
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
    let entry = |i: usize| WeightEntry {
        selector: i,
        kind: specs[i].kind.to_string(),
        weight: w[i],
    };
    let decided = s.successes + s.failures;
    Ok(SessionView {
        id,
        question_id: s.question.id.clone(),
        user: s.user,
        closed: !s.is_open(),
        close_reason: s.closed,
        t: s.current.timestep,
        last_operator: s.last_operator.map(|o| engine.catalog().get(o).name.clone()),
        last_fell_back: s.last_fell_back,
        description: DescriptionView {
            fingerprint: st.fingerprint.clone(),
            unique_named: st.unique_named,
            n_boxes: st.n_boxes,
            conjuncts: st.conjunct_count,
            disjuncts: st.disjunct_count,
            box_ranges: st.box_range_count,
            vol_named_total: st.vol_named_total,
            vol_box_total: st.vol_box_total,
            box_coverage: st.box_coverage,
            named_predicates: st.named_multiset.iter().map(|(k, v)| (k.clone(), *v)).collect(),
            features: FEATURE_NAMES
                .iter()
                .zip(&s.current.features)
                .map(|(n, v)| (n.to_string(), *v))
                .collect(),
        },
        top_weights: order.iter().take(10).map(|&i| entry(i)).collect(),
        bottom_weights: order.iter().rev().take(10).map(|&i| entry(i)).collect(),
        last_d_samp: s.last_trace.as_ref().map(|t| t.d_samp.masses().to_vec()),
        session_success_rate: (decided > 0).then(|| f64::from(s.successes) / f64::from(decided)),
        global_success_rate: engine.history().global_success_rate(),
        allowed_actions: if s.is_open() {
            ["m", "l", "b", "u"].map(String::from).to_vec()
        } else {
            Vec::new()
        },
    })
}

async fn create_session(State(app): State<AppState>, body: Bytes) -> Result<Json<SessionView>, ApiError> {
    let req: CreateSession = if body.iter().all(u8::is_ascii_whitespace) {
        CreateSession::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?
    };
    let mut g = app.lock();
    req.validate(&g.engine.config().autouser)
        .map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e))?;
    let id = g.engine.open_session(UserSource::Interactive)?;
    app.publish(&mut g)?;
    Ok(Json(view(&g.engine, id)?))
}

async fn get_session(State(app): State<AppState>, Path(id): Path<u64>) -> Result<Json<SessionView>, ApiError> {
    Ok(Json(view(&app.lock().engine, id)?))
}

/// Clears the in-flight mark even if the handler is dropped.
struct InFlight {
    app: AppState,
    id: u64,
}

impl Drop for InFlight {
    fn drop(&mut self) {
        self.app.lock().in_flight.remove(&self.id);
    }
}

async fn post_feedback(
    State(app): State<AppState>,
    Path(id): Path<u64>,
    body: Bytes,
) -> Result<Json<FeedbackResponse>, ApiError> {
    let f: FeedbackKind =
        serde_json::from_slice(&body).map_err(|e| ApiError(StatusCode::BAD_REQUEST, format!("malformed feedback: {e}")))?;
    {
        let mut g = app.lock();
        let s = g
            .engine
            .session(id)
            .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown session {id}")))?;
        if !s.is_open() {
            return Err(ApiError(StatusCode::CONFLICT, format!("session {id} is closed")));
        }
        if !g.in_flight.insert(id) {
            return Err(ApiError(StatusCode::CONFLICT, format!("session {id} already has a request in flight")));
        }
    }
    let guard = InFlight { app: app.clone(), id };
    let worker = app.clone();
    let result = tokio::task::spawn_blocking(move || {
        let mut g = worker.lock();
        let outcome = g.engine.feedback(id, f, None);
        worker.publish(&mut g)?;
        let outcome = outcome?;
        Ok::<_, ApiError>(FeedbackResponse {
            outcome,
            view: view(&g.engine, id)?,
        })
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    drop(guard);
    result.map(Json)
}

async fn get_metrics(State(app): State<AppState>, Path(id): Path<u64>) -> Result<Json<Report>, ApiError> {
    let g = app.lock();
    if g.engine.session(id).is_none() {
        return Err(ApiError(StatusCode::NOT_FOUND, format!("unknown session {id}")));
    }
    let lines = g.events.get(&id).map(Vec::as_slice).unwrap_or_default();
    Ok(Json(Report::build(lines, g.engine.bank().specs(), g.engine.catalog(), DEFAULT_WINDOW)))
}

fn sse_event(l: &LogLine) -> SseEvent {
    SseEvent::default()
        .id(l.seq.to_string())
        .event(event_tag(&l.event))
        .data(serde_json::to_string(l).expect("log line serializes"))
}

/// Buffered lines after `Last-Event-ID`, then live ones; the stream ends
/// after the session's close event.
async fn stream_events(
    State(app): State<AppState>,
    Path(id): Path<u64>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<SseEvent, Infallible>>>, ApiError> {
    let after: Option<u64> = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse().ok());
    let (backlog, rx) = {
        let g = app.lock();
        if g.engine.session(id).is_none() {
            return Err(ApiError(StatusCode::NOT_FOUND, format!("unknown session {id}")));
        }
        // Subscribing under the lock means no line falls between the
        // backlog and the live feed.
        let rx = app.tx.subscribe();
        let backlog: Vec<LogLine> = g
            .events
            .get(&id)
            .into_iter()
            .flatten()
            .filter(|l| after.is_none_or(|a| l.seq > a))
            .cloned()
            .collect();
        (backlog, rx)
    };
    let closed = backlog.iter().any(|l| matches!(l.event, Event::SessionClosed { .. }));
    let last_seq = backlog.last().map(|l| l.seq).or(after);
    let live = stream::unfold((rx, closed, last_seq), move |(mut rx, done, last)| async move {
        if done {
            return None;
        }
        loop {
            match rx.recv().await {
                Ok(l) if l.session == id && last.is_none_or(|s| l.seq > s) => {
                    let done = matches!(l.event, Event::SessionClosed { .. });
                    let seq = l.seq;
                    return Some((l, (rx, done, Some(seq))));
                }
                Ok(_) | Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    let events = stream::iter(backlog).chain(live).map(|l| Ok(sse_event(&l)));
    Ok(Sse::new(events).keep_alive(KeepAlive::default()))
}

async fn catalog(State(app): State<AppState>) -> Response {
    Json(app.lock().engine.catalog().operators().to_vec()).into_response()
}

async fn selectors(State(app): State<AppState>) -> Response {
    Json(app.lock().engine.bank().specs().to_vec()).into_response()
}

pub fn router(app: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/feedback", post(post_feedback))
        .route("/sessions/{id}/metrics", get(get_metrics))
        .route("/sessions/{id}/events", get(stream_events))
        .route("/catalog", get(catalog))
        .route("/selectors", get(selectors))
        .with_state(app)
}

/// Serves until the process is stopped.
pub async fn serve(app: AppState, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(app)).await
}
