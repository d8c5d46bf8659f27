//! `opsteer` command-line driver.
//!
//! Exit codes: 0 success, 1 replay mismatch, 2 configuration error,
//! 3 I/O or log error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use opsteer_core::config::{ConfigError, EngineConfig, Policy};
use opsteer_core::engine::{replay, run_bootstrap, Engine, EngineError};
use opsteer_core::log::{resolve_run_dir, LogError, LogWriter, RunLog};
use opsteer_core::metrics::{LogFilter, Report, DEFAULT_WINDOW};
use opsteer_core::operators::OperatorCatalog;
use opsteer_core::selectors::SelectorBank;

#[derive(Parser)]
#[command(name = "opsteer", version, about = "Operator-selection learner with a simulated user")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    Learned,
    BlankOnly,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
    Html,
}

#[derive(Subcommand)]
enum Command {
    /// Run autouser sessions from scratch and log them.
    Bootstrap {
        #[arg(long, default_value_t = 300)]
        sessions: u64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_adjustments: Option<u32>,
        #[arg(long)]
        out: PathBuf,
        /// TOML engine configuration; flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        policy: Option<PolicyArg>,
    },
    /// Re-execute a logged run and check every event matches.
    Replay {
        /// Run directory, or a session file to replay up to that session.
        #[arg(long)]
        log: PathBuf,
    },
    /// Compute the analysis battery for a run.
    Report {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        /// Output directory for csv (default: <log>/report); json and html
        /// go to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_WINDOW)]
        window: usize,
        /// Restrict to these sessions.
        #[arg(long = "session")]
        sessions: Vec<u64>,
    },
    /// Print matching log lines as JSONL.
    Slice {
        #[arg(long)]
        log: PathBuf,
        #[arg(long = "session")]
        sessions: Vec<u64>,
        /// Event tags: session_opened, step, feedback, reward, weights, session_closed.
        #[arg(long = "event")]
        events: Vec<String>,
        /// Only steps that applied this operator.
        #[arg(long)]
        operator: Option<String>,
    },
    /// Serve the HTTP session API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Warm-start from a bootstrap run by replaying it.
        #[arg(long)]
        from: Option<PathBuf>,
        /// Log interactive sessions to this run directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print the operator catalog as JSON.
    Catalog,
    /// Print the selector census as JSON.
    Selectors {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Io(String),
    Mismatch(String),
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Io(e.to_string())
        }
    }
}

impl From<LogError> for Failure {
    fn from(e: LogError) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Read { .. } => Failure::Io(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

fn load_config(path: Option<&Path>) -> Result<EngineConfig, Failure> {
    Ok(match path {
        Some(p) => EngineConfig::load(p)?,
        None => EngineConfig::default(),
    })
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<(), Failure> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, v).map_err(|e| Failure::Io(e.to_string()))?;
    writeln!(out)?;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Bootstrap {
            sessions,
            seed,
            max_adjustments,
            out,
            config,
            policy,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(m) = max_adjustments {
                cfg.autouser.max_adjustments = m;
            }
            match policy {
                Some(PolicyArg::Learned) => cfg.policy = Policy::Learned,
                Some(PolicyArg::BlankOnly) => cfg.policy = Policy::BlankOnly,
                None => {}
            }
            cfg.validate()?;
            let engine = run_bootstrap(cfg, sessions, Some(&out))?;
            print_json(&engine.summary())
        }
        Command::Replay { log } => {
            let run = RunLog::open(&log)?;
            let until = if log.is_file() {
                run.lines
                    .iter()
                    .find(|l| log.file_name().and_then(|n| n.to_str()) == Some(&opsteer_core::log::session_file_name(l.session)))
                    .map(|l| l.session)
            } else {
                None
            };
            let (_, report) = replay(&run, until)?;
            print_json(&report)?;
            match report.first_mismatch {
                None => Ok(()),
                Some(seq) => Err(Failure::Mismatch(format!("replay diverges at seq {seq}"))),
            }
        }
        Command::Report {
            log,
            format,
            out,
            window,
            sessions,
        } => {
            let mut run = RunLog::open(&log)?;
            if !sessions.is_empty() {
                run.lines.retain(|l| sessions.contains(&l.session));
            }
            let report = Report::for_run(&run, window);
            match format {
                Format::Json => match out {
                    Some(p) => std::fs::write(&p, serde_json::to_string_pretty(&report).expect("report serializes"))?,
                    None => print_json(&report)?,
                },
                Format::Html => match out {
                    Some(p) => std::fs::write(&p, report.to_html())?,
                    None => print!("{}", report.to_html()),
                },
                Format::Csv => {
                    let dir = match out {
                        Some(p) => p,
                        None => resolve_run_dir(&log)?.join("report"),
                    };
                    report.write_csv(&dir)?;
                    eprintln!("wrote report tables to {}", dir.display());
                }
            }
            Ok(())
        }
        Command::Slice {
            log,
            sessions,
            events,
            operator,
        } => {
            let run = RunLog::open(&log)?;
            let filter = LogFilter {
                sessions: (!sessions.is_empty()).then_some(sessions),
                events: (!events.is_empty()).then_some(events),
                operator,
            };
            let mut out = std::io::stdout().lock();
            for l in filter.apply(&run.lines) {
                serde_json::to_writer(&mut out, l).map_err(|e| Failure::Io(e.to_string()))?;
                writeln!(out)?;
            }
            Ok(())
        }
        Command::Serve {
            port,
            host,
            from,
            out,
            config,
        } => {
            let engine = match from {
                Some(dir) => {
                    let run = RunLog::open(&dir)?;
                    let (engine, report) = replay(&run, None)?;
                    if let Some(seq) = report.first_mismatch {
                        return Err(Failure::Mismatch(format!("warm-start log diverges at seq {seq}")));
                    }
                    eprintln!("warm-started from {} ({} records)", dir.display(), report.records);
                    engine
                }
                None => Engine::new(load_config(config.as_deref())?)?,
            };
            let writer = match out {
                Some(dir) => Some(LogWriter::create(&dir, engine.config())?),
                None => None,
            };
            let addr: std::net::SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|e| Failure::Config(format!("bad address {host}:{port}: {e}")))?;
            let rt = tokio::runtime::Runtime::new()?;
            eprintln!("listening on http://{addr}");
            rt.block_on(opsteer_service::serve(opsteer_service::AppState::new(engine, writer), addr))?;
            Ok(())
        }
        Command::Catalog => print_json(&OperatorCatalog::build().operators()),
        Command::Selectors { config } => {
            let cfg = load_config(config.as_deref())?;
            cfg.validate()?;
            let bank = SelectorBank::new(&OperatorCatalog::build(), cfg.selectors.clone(), cfg.seed);
            print_json(&bank.specs())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Mismatch(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Config(m)) => {
            eprintln!("configuration error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Io(m)) => {
            eprintln!("I/O error: {m}");
            ExitCode::from(3)
        }
    }
}
