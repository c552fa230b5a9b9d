//! Evaluator contract, fitness assembly and the deterministic surrogate.
//!
//! Workers report raw per-epoch validation metrics. The engine reduces them
//! to `(best_error, k * best_loss)`, tracking the two minima independently
//! across epochs, so one evaluation log can be re-scored under any `k`.

use serde::{Deserialize, Serialize};

use crate::genome::{self, ArchitectureSpec, Genome, SearchSpaceConfig};
use crate::parallel::{self, Execution};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("epoch history is empty")]
    EmptyHistory,
    #[error("malformed epoch history: {0}")]
    MalformedHistory(String),
    #[error("evaluation failed: {0}")]
    Failed(String),
    #[error("evaluator unreachable: {0}")]
    Connectivity(String),
}

/// Bi-objective fitness, both components minimized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitnessVector {
    pub f1: f64,
    pub f2: f64,
}

impl FitnessVector {
    pub const fn new(f1: f64, f2: f64) -> Self {
        Self { f1, f2 }
    }

    /// Fitness assigned to failed or out-of-memory evaluations.
    pub fn penalty(k: f64) -> Self {
        Self { f1: 1.0, f2: k * 100.0 }
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.f1, self.f2]
    }

    /// Pareto dominance for minimization: no worse anywhere, better somewhere.
    pub fn dominates(&self, other: &Self) -> bool {
        self.f1 <= other.f1 && self.f2 <= other.f2 && (self.f1 < other.f1 || self.f2 < other.f2)
    }

    pub fn is_finite(&self) -> bool {
        self.f1.is_finite() && self.f2.is_finite()
    }
}

/// Per-epoch validation error and mean loss, index-aligned.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochHistory {
    pub errors: Vec<f64>,
    pub losses: Vec<f64>,
}

impl EpochHistory {
    pub fn new(errors: Vec<f64>, losses: Vec<f64>) -> Result<Self, EvalError> {
        let h = Self { errors, losses };
        h.check()?;
        Ok(h)
    }

    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn check(&self) -> Result<(), EvalError> {
        if self.errors.is_empty() && self.losses.is_empty() {
            return Err(EvalError::EmptyHistory);
        }
        if self.errors.len() != self.losses.len() {
            return Err(EvalError::MalformedHistory(format!(
                "{} errors vs {} losses",
                self.errors.len(),
                self.losses.len()
            )));
        }
        if let Some(e) = self.errors.iter().find(|e| !(0.0..=1.0).contains(*e)) {
            return Err(EvalError::MalformedHistory(format!("error {e} outside [0, 1]")));
        }
        if let Some(l) = self.losses.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
            return Err(EvalError::MalformedHistory(format!("loss {l} is not a finite non-negative value")));
        }
        Ok(())
    }

    pub fn best_error(&self) -> f64 {
        self.errors.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn best_loss(&self) -> f64 {
        self.losses.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// `(min error, k * min loss)`; the minima may come from different epochs.
pub fn fitness_from_history(h: &EpochHistory, k: f64) -> Result<FitnessVector, EvalError> {
    h.check()?;
    Ok(FitnessVector { f1: h.best_error(), f2: k * h.best_loss() })
}

/// Component-wise scaling applied only when exporting tables.
pub fn scale_for_report(fv: &FitnessVector, factor: f64) -> (f64, f64) {
    (fv.f1 * factor, fv.f2 * factor)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    /// Cosine annealing over the job's epochs (search phase).
    #[default]
    Cosine,
    /// Halve the learning rate after 8 epochs without a new best loss
    /// (retrain phase).
    PlateauHalving,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingParams {
    pub lr: f64,
    pub batch_size: u32,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: ScheduleMode,
}

impl Default for TrainingParams {
    fn default() -> Self {
        Self { lr: 0.025, batch_size: 64, momentum: 0.9, weight_decay: 0.0005, schedule: ScheduleMode::Cosine }
    }
}

/// One architecture to train and score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalJob {
    pub job_id: u64,
    pub genome: Genome,
    pub spec: ArchitectureSpec,
    pub epochs: u32,
    pub training: TrainingParams,
    pub dataset: String,
    pub seed: u64,
}

impl EvalJob {
    pub fn check(&self) -> Result<(), EvalError> {
        let t = &self.training;
        if self.epochs == 0 {
            return Err(EvalError::Failed("epochs must be at least 1".into()));
        }
        if !(t.lr > 0.0 && t.batch_size > 0 && t.momentum >= 0.0 && t.weight_decay >= 0.0) {
            return Err(EvalError::Failed("training hyperparameters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalStatus {
    Ok,
    Failed,
    Oom,
}

/// What a worker reports for one job.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOutcome {
    pub status: EvalStatus,
    pub best_error: Option<f64>,
    pub best_loss: Option<f64>,
    pub history: Option<EpochHistory>,
    pub params: u64,
    pub wall_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl EvalOutcome {
    pub fn from_history(history: EpochHistory, params: u64, wall_seconds: f64) -> Self {
        Self {
            status: EvalStatus::Ok,
            best_error: Some(history.best_error()),
            best_loss: Some(history.best_loss()),
            history: Some(history),
            params,
            wall_seconds,
            note: None,
        }
    }

    pub fn failed(note: impl Into<String>) -> Self {
        Self {
            status: EvalStatus::Failed,
            best_error: None,
            best_loss: None,
            history: None,
            params: 0,
            wall_seconds: 0.0,
            note: Some(note.into()),
        }
    }

    /// Engine-side fitness: the history's minima scaled by `k`, or the
    /// penalty for anything that is not a clean, finite result.
    pub fn fitness(&self, k: f64) -> FitnessVector {
        if self.status != EvalStatus::Ok {
            return FitnessVector::penalty(k);
        }
        let fv = match &self.history {
            Some(h) => fitness_from_history(h, k).ok(),
            None => match (self.best_error, self.best_loss) {
                (Some(e), Some(l)) if (0.0..=1.0).contains(&e) && l.is_finite() && l >= 0.0 => {
                    Some(FitnessVector::new(e, k * l))
                }
                _ => None,
            },
        };
        fv.filter(FitnessVector::is_finite).unwrap_or_else(|| FitnessVector::penalty(k))
    }
}

/// Scores one job. Implementations must be callable from several threads.
pub trait JobEvaluator: Send + Sync {
    fn evaluate(&self, job: &EvalJob) -> Result<EvalOutcome, EvalError>;
}

/// Scores a generation's worth of jobs, returning outcomes in job order.
pub trait BatchEvaluator {
    fn evaluate_batch(&mut self, jobs: &[EvalJob]) -> Result<Vec<EvalOutcome>, EvalError>;
}

impl<B: BatchEvaluator + ?Sized> BatchEvaluator for &mut B {
    fn evaluate_batch(&mut self, jobs: &[EvalJob]) -> Result<Vec<EvalOutcome>, EvalError> {
        (**self).evaluate_batch(jobs)
    }
}

/// Runs a `JobEvaluator` in-process over the batch; job errors become
/// `failed` outcomes.
pub struct LocalEvaluator<E> {
    pub inner: E,
    pub execution: Execution,
}

impl<E: JobEvaluator> LocalEvaluator<E> {
    pub fn new(inner: E, execution: Execution) -> Self {
        Self { inner, execution }
    }
}

impl<E: JobEvaluator> BatchEvaluator for LocalEvaluator<E> {
    fn evaluate_batch(&mut self, jobs: &[EvalJob]) -> Result<Vec<EvalOutcome>, EvalError> {
        let inner = &self.inner;
        Ok(parallel::map(jobs, self.execution, |job| match inner.evaluate(job) {
            Ok(o) => o,
            Err(e) => EvalOutcome::failed(e.to_string()),
        }))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    pub target_params: u64,
    #[serde(default)]
    pub unit_weight: f64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self { target_params: 1_000_000, unit_weight: 0.1 }
    }
}

impl SurrogateConfig {
    /// Largest loss the surrogate can report.
    pub fn max_loss(&self) -> f64 {
        1.0 + self.unit_weight
    }
}

/// Single-epoch history from architecture size alone: the error is the
/// log10 distance of the parameter count to the target (clamped to
/// `[0, 1]`), the loss adds a unit-count term.
pub fn surrogate_evaluate(
    g: &Genome,
    cfg: &SearchSpaceConfig,
    scfg: &SurrogateConfig,
) -> Result<EpochHistory, EvalError> {
    let spec = genome::decode(g, cfg).map_err(|e| EvalError::Failed(e.to_string()))?;
    Ok(surrogate_history(genome::count_params(&spec), g.unit_count(), cfg.max_units(), scfg))
}

fn surrogate_history(params: u64, units: usize, max_units: usize, scfg: &SurrogateConfig) -> EpochHistory {
    let target = scfg.target_params.max(1) as f64;
    let error = ((params.max(1) as f64).log10() - target.log10()).abs().clamp(0.0, 1.0);
    let loss = error + scfg.unit_weight * units as f64 / max_units.max(1) as f64;
    EpochHistory { errors: vec![error], losses: vec![loss] }
}

/// In-process surrogate worker. Reports zero wall time so that runs are
/// bit-reproducible.
#[derive(Clone, Debug)]
pub struct SurrogateEvaluator {
    pub space: SearchSpaceConfig,
    pub config: SurrogateConfig,
}

impl SurrogateEvaluator {
    pub fn new(space: SearchSpaceConfig, config: SurrogateConfig) -> Self {
        Self { space, config }
    }
}

impl JobEvaluator for SurrogateEvaluator {
    fn evaluate(&self, job: &EvalJob) -> Result<EvalOutcome, EvalError> {
        job.check()?;
        let spec = genome::decode(&job.genome, &self.space).map_err(|e| EvalError::Failed(e.to_string()))?;
        let params = genome::count_params(&spec);
        let h = surrogate_history(params, job.genome.unit_count(), self.space.max_units(), &self.config);
        Ok(EvalOutcome::from_history(h, params, 0.0))
    }
}
