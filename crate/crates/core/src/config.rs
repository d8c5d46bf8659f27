//! Engine configuration, loadable from TOML. Every section has defaults,
//! so an empty file is a valid configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autouser::AutouserConfig;
use crate::env::EnvConfig;
use crate::history::DEFAULT_CAPACITY;
use crate::selectors::SelectorConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid TOML: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// How the learner picks operators for m/l requests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Selector votes, weighted aggregation and the UCB choice.
    #[default]
    Learned,
    /// Always the blank operator; the baseline for learning gains.
    BlankOnly,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Limits {
    /// Force-close a session after this much wall-clock time. Breaks
    /// determinism, so off by default.
    pub wall_clock_secs: Option<f64>,
    /// Advisory cap on stored records; appends beyond it fail.
    pub max_records: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogConfig {
    /// Also log the full weight vector every this many steps; `0` logs it
    /// only when a session closes.
    pub weight_snapshot_every: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Master seed; overrides `env.master_seed`.
    pub seed: u64,
    pub policy: Policy,
    pub reservoir_capacity: usize,
    pub env: EnvConfig,
    pub selectors: SelectorConfig,
    pub autouser: AutouserConfig,
    pub limits: Limits,
    pub log: LogConfig,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            policy: Policy::Learned,
            reservoir_capacity: DEFAULT_CAPACITY,
            env: EnvConfig::default(),
            selectors: SelectorConfig::default(),
            autouser: AutouserConfig::default(),
            limits: Limits::default(),
            log: LogConfig::default(),
        }
    }
}

impl EngineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.env.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.autouser
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.reservoir_capacity == 0 {
            return Err(ConfigError::Invalid("reservoir_capacity must be positive".into()));
        }
        if self.selectors.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(ConfigError::Invalid("selector alphas must lie in (0, 1)".into()));
        }
        if self.selectors.knn_z.contains(&0) {
            return Err(ConfigError::Invalid("knn z must be at least 1".into()));
        }
        if let Some(w) = self.limits.wall_clock_secs {
            if w.is_nan() || w <= 0.0 {
                return Err(ConfigError::Invalid("wall_clock_secs must be positive".into()));
            }
        }
        if self.limits.max_records == Some(0) {
            return Err(ConfigError::Invalid("max_records must be positive".into()));
        }
        Ok(())
    }
}
