//! Event-sourced JSONL logs.
//!
//! A run directory holds `run.json` (the configuration), `index.jsonl`
//! (one line per closed session) and `sessions/session-NNNNNN.jsonl`.
//! Every line carries a run-wide sequence number, so merging the session
//! files by `seq` restores the exact order in which the engine acted.
//! Lines hold no timestamps; identical seeds give identical bytes.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autouser::AutouserVerdict;
use crate::config::EngineConfig;
use crate::decision::DecisionTrace;
use crate::env::StateParams;
use crate::history::StatsSummary;
use crate::learning::FeedbackKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserSource {
    Autouser,
    Interactive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CloseReason {
    /// The user issued `b`.
    Exit,
    WallClock,
    RecordCap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    SessionOpened {
        question_id: String,
        user: UserSource,
        params: StateParams,
    },
    /// A new state, produced by `request` through `operator`.
    Step {
        t: u32,
        request: Option<FeedbackKind>,
        /// Catalog index; absent for history travel.
        operator: Option<usize>,
        operator_name: Option<String>,
        fell_back: bool,
        params: StateParams,
        summary: StatsSummary,
        features: Vec<f64>,
        trace: Option<DecisionTrace>,
    },
    /// The user's request after seeing state `t`.
    Feedback {
        t: u32,
        feedback: FeedbackKind,
        verdict: Option<AutouserVerdict>,
        /// Answer to a `list_disallowed` query.
        #[serde(skip_serializing_if = "Option::is_none", default)]
        disallowed: Option<Vec<String>>,
    },
    /// Reward for the request that produced state `t`.
    Reward { t: u32, y: i8, weights_updated: bool, weight_delta_l1: f64 },
    Weights { t: u32, weights: Vec<f64> },
    SessionClosed {
        t: u32,
        reason: CloseReason,
        weights: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub seq: u64,
    pub session: u64,
    #[serde(flatten)]
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub session: u64,
    pub file: String,
    pub question_id: String,
    pub user: UserSource,
    pub steps: u32,
    pub reason: CloseReason,
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("malformed log line {line} in {path}: {source}")]
    Parse {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> LogError + '_ {
    move |source| LogError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn session_file_name(session: u64) -> String {
    format!("session-{session:06}.jsonl")
}

/// Appends engine events to a run directory.
pub struct LogWriter {
    dir: PathBuf,
    open: HashMap<u64, (BufWriter<File>, String, UserSource, u32)>,
    index: BufWriter<File>,
}

impl LogWriter {
    /// Creates the directory layout and writes `run.json`.
    pub fn create(dir: &Path, cfg: &EngineConfig) -> Result<Self, LogError> {
        fs::create_dir_all(dir.join("sessions")).map_err(io_err(dir))?;
        let run = dir.join("run.json");
        let text = serde_json::to_string_pretty(cfg).expect("config serializes");
        fs::write(&run, text + "\n").map_err(io_err(&run))?;
        let index_path = dir.join("index.jsonl");
        let index = File::create(&index_path).map_err(io_err(&index_path))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            open: HashMap::new(),
            index: BufWriter::new(index),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, line: &LogLine) -> Result<(), LogError> {
        if let Event::SessionOpened { question_id, user, .. } = &line.event {
            let path = self.dir.join("sessions").join(session_file_name(line.session));
            let f = File::create(&path).map_err(io_err(&path))?;
            self.open
                .insert(line.session, (BufWriter::new(f), question_id.clone(), *user, 0));
        }
        let path = self.dir.join("sessions").join(session_file_name(line.session));
        let (w, question_id, user, steps) = self
            .open
            .get_mut(&line.session)
            .ok_or_else(|| LogError::Invalid(format!("event for unopened session {}", line.session)))?;
        serde_json::to_writer(&mut *w, line).expect("log line serializes");
        w.write_all(b"\n").map_err(io_err(&path))?;
        match &line.event {
            Event::Step { t, .. } => *steps = *t,
            Event::SessionClosed { reason, .. } => {
                let entry = IndexEntry {
                    session: line.session,
                    file: format!("sessions/{}", session_file_name(line.session)),
                    question_id: question_id.clone(),
                    user: *user,
                    steps: *steps,
                    reason: *reason,
                };
                w.flush().map_err(io_err(&path))?;
                self.open.remove(&line.session);
                let ip = self.dir.join("index.jsonl");
                serde_json::to_writer(&mut self.index, &entry).expect("index serializes");
                self.index.write_all(b"\n").map_err(io_err(&ip))?;
            }
            _ => {}
        }
        Ok(())
    }

    pub fn write_all(&mut self, lines: &[LogLine]) -> Result<(), LogError> {
        lines.iter().try_for_each(|l| self.write(l))
    }

    pub fn flush(&mut self) -> Result<(), LogError> {
        let dir = self.dir.clone();
        for (w, ..) in self.open.values_mut() {
            w.flush().map_err(io_err(&dir))?;
        }
        self.index.flush().map_err(io_err(&dir))
    }
}

impl Drop for LogWriter {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}

pub fn read_lines(path: &Path) -> Result<Vec<LogLine>, LogError> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| LogError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

pub fn read_config(dir: &Path) -> Result<EngineConfig, LogError> {
    let path = dir.join("run.json");
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|source| LogError::Parse {
        path: path.display().to_string(),
        line: 0,
        source,
    })
}

/// A run directory: its configuration and every event, in `seq` order.
#[derive(Debug, Clone)]
pub struct RunLog {
    pub config: EngineConfig,
    pub lines: Vec<LogLine>,
}

impl RunLog {
    /// Reads a run directory, or the directory holding a session file.
    pub fn open(path: &Path) -> Result<Self, LogError> {
        let dir = resolve_run_dir(path)?;
        let config = read_config(&dir)?;
        let sessions = dir.join("sessions");
        let mut files: Vec<PathBuf> = fs::read_dir(&sessions)
            .map_err(io_err(&sessions))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        let mut lines = Vec::new();
        for f in files {
            lines.extend(read_lines(&f)?);
        }
        lines.sort_by_key(|l| l.seq);
        Ok(Self { config, lines })
    }

    pub fn sessions(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self
            .lines
            .iter()
            .filter(|l| matches!(l.event, Event::SessionOpened { .. }))
            .map(|l| l.session)
            .collect();
        ids.dedup();
        ids
    }

    pub fn session_lines(&self, session: u64) -> impl Iterator<Item = &LogLine> {
        self.lines.iter().filter(move |l| l.session == session)
    }
}

/// `path` itself when it holds `run.json`, else the run directory two
/// levels above a session file.
pub fn resolve_run_dir(path: &Path) -> Result<PathBuf, LogError> {
    if path.is_dir() && path.join("run.json").exists() {
        return Ok(path.to_path_buf());
    }
    if let Some(dir) = path.parent().and_then(Path::parent) {
        if dir.join("run.json").exists() {
            return Ok(dir.to_path_buf());
        }
    }
    Err(LogError::Invalid(format!(
        "{} is neither a run directory nor a session log inside one",
        path.display()
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_round_trips_with_flat_tag() {
        let line = LogLine {
            seq: 4,
            session: 2,
            event: Event::Reward {
                t: 3,
                y: -1,
                weights_updated: true,
                weight_delta_l1: 0.5,
            },
        };
        let s = serde_json::to_string(&line).unwrap();
        assert!(s.starts_with("{\"seq\":4,\"session\":2,\"event\":\"reward\""), "{s}");
        assert_eq!(serde_json::from_str::<LogLine>(&s).unwrap(), line);
    }

    #[test]
    fn writer_lays_out_directory() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = LogWriter::create(dir.path(), &EngineConfig::default()).unwrap();
        let lines = vec![
            LogLine {
                seq: 0,
                session: 1,
                event: Event::SessionOpened {
                    question_id: "q".into(),
                    user: UserSource::Interactive,
                    params: StateParams::default(),
                },
            },
            LogLine {
                seq: 1,
                session: 1,
                event: Event::SessionClosed {
                    t: 0,
                    reason: CloseReason::Exit,
                    weights: vec![1.0],
                },
            },
        ];
        w.write_all(&lines).unwrap();
        drop(w);
        let run = RunLog::open(dir.path()).unwrap();
        assert_eq!(run.lines, lines);
        assert_eq!(run.sessions(), vec![1]);
        let index = fs::read_to_string(dir.path().join("index.jsonl")).unwrap();
        assert_eq!(index.lines().count(), 1);
        let via_file = RunLog::open(&dir.path().join("sessions").join(session_file_name(1))).unwrap();
        assert_eq!(via_file.lines.len(), 2);
        assert!(RunLog::open(&dir.path().join("nope")).is_err());
    }
}
