//! Run configuration as read from JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::evaluation::{SurrogateConfig, TrainingParams};
use crate::genome::SearchSpaceConfig;
use crate::moead::ZMode;
use crate::parallel::Execution;
use crate::variation::VariationConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EvaluatorConfig {
    /// In-process, training-free scoring.
    Surrogate(SurrogateConfig),
    /// TCP controller handing jobs to connected workers.
    Remote(RemoteConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub listen: String,
    /// Seconds before an assigned job is reissued.
    #[serde(default = "default_job_timeout")]
    pub job_timeout_secs: u64,
    /// Workers that must say hello before the first batch is dispatched.
    #[serde(default = "default_one")]
    pub min_workers: usize,
    /// Assignments per job before it is recorded as failed.
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    /// Seconds to wait for `min_workers` before giving up.
    #[serde(default = "default_connect_timeout")]
    pub connect_timeout_secs: u64,
}

fn default_job_timeout() -> u64 {
    3600
}
fn default_one() -> usize {
    1
}
fn default_attempts() -> u32 {
    3
}
fn default_connect_timeout() -> u64 {
    120
}
fn default_repeats() -> u32 {
    1
}
fn default_scale() -> f64 {
    1.0
}
fn default_dataset() -> String {
    "mnist".into()
}

impl RemoteConfig {
    pub fn new(listen: impl Into<String>) -> Self {
        Self {
            listen: listen.into(),
            job_timeout_secs: default_job_timeout(),
            min_workers: 1,
            max_attempts: default_attempts(),
            connect_timeout_secs: default_connect_timeout(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub search_space: SearchSpaceConfig,
    #[serde(default)]
    pub variation: VariationConfig,
    /// Number of subproblems `N`.
    pub population: usize,
    /// Neighborhood size `T`; `max(1, N / 5)` when absent.
    #[serde(default)]
    pub neighbors: Option<usize>,
    pub generations: usize,
    /// Weight on the loss objective.
    pub k: f64,
    /// Epochs per search-time evaluation.
    pub nep_train: u32,
    /// Epochs when retraining the final archive.
    pub nep_full: u32,
    /// Independent retrains per archive member.
    #[serde(default = "default_repeats")]
    pub final_repeats: u32,
    pub evaluator: EvaluatorConfig,
    #[serde(default)]
    pub training: TrainingParams,
    #[serde(default = "default_dataset")]
    pub dataset: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub z_mode: ZMode,
    /// Multiplier applied to both objectives in reports only.
    #[serde(default = "default_scale")]
    pub report_scale: f64,
    #[serde(default)]
    pub execution: Execution,
}

impl RunConfig {
    pub fn from_json(s: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let s = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&s)
    }

    /// A small surrogate-scored MNIST run.
    pub fn mnist_surrogate() -> Self {
        Self {
            search_space: SearchSpaceConfig::mnist(),
            variation: VariationConfig::default(),
            population: 20,
            neighbors: Some(4),
            generations: 15,
            k: 0.2,
            nep_train: 1,
            nep_full: 1,
            final_repeats: 1,
            evaluator: EvaluatorConfig::Surrogate(SurrogateConfig::default()),
            training: TrainingParams::default(),
            dataset: "mnist".into(),
            seed: 7,
            z_mode: ZMode::Min,
            report_scale: 1.0,
            execution: Execution::default(),
        }
    }

    pub fn neighborhood_size(&self) -> usize {
        self.neighbors.unwrap_or((self.population / 5).max(1))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.search_space.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.variation.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.population == 0 {
            return bad("population must be at least 1".into());
        }
        let t = self.neighborhood_size();
        if t == 0 || t > self.population {
            return bad(format!("neighbors {t} outside [1, {}]", self.population));
        }
        if !(self.k.is_finite() && self.k >= 0.0) {
            return bad(format!("k must be finite and non-negative, got {}", self.k));
        }
        if self.nep_train == 0 || self.nep_full == 0 {
            return bad("epoch counts must be at least 1".into());
        }
        if self.final_repeats == 0 {
            return bad("final_repeats must be at least 1".into());
        }
        if !(self.report_scale.is_finite() && self.report_scale > 0.0) {
            return bad("report_scale must be positive".into());
        }
        let t = &self.training;
        if !(t.lr > 0.0 && t.batch_size > 0 && t.momentum >= 0.0 && t.weight_decay >= 0.0) {
            return bad("training hyperparameters must be positive".into());
        }
        match &self.evaluator {
            EvaluatorConfig::Surrogate(s) => {
                if s.target_params == 0 || !(s.unit_weight.is_finite() && s.unit_weight >= 0.0) {
                    return bad("surrogate needs target_params >= 1 and unit_weight >= 0".into());
                }
            }
            EvaluatorConfig::Remote(r) => {
                if r.min_workers == 0 || r.max_attempts == 0 || r.job_timeout_secs == 0 {
                    return bad("remote evaluator needs positive min_workers, max_attempts and job_timeout_secs".into());
                }
            }
        }
        Ok(())
    }
}
