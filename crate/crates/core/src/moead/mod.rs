//! Decomposition-based multi-objective search over genomes.

mod archive;
mod decomposition;
mod engine;

pub use archive::{ep_update, hypervolume_2d, ArchiveEntry, EpArchive};
pub use decomposition::{
    build_neighborhoods, chebyshev, gen_weight_vectors, update_ideal, IdealPoint, WeightVector, ZMode,
};
pub use engine::{
    evolve_generation, initialize, job_seed, retrain_archive, run_search, stream_rng, EvalRecord, FinalEntry,
    MemoryRecorder, NullRecorder, Phase, RunRecorder, SearchOutcome, SearchState, Subproblem,
};

use crate::evaluation::EvalError;
use crate::genome::GenomeError;

#[derive(Debug, thiserror::Error)]
pub enum MoeadError {
    #[error("only two objectives are supported, got {0}")]
    UnsupportedObjectiveCount(usize),
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Evaluation(#[from] EvalError),
    #[error(transparent)]
    Genome(#[from] GenomeError),
    #[error("evaluator returned {got} outcomes for {expected} jobs")]
    BatchSize { expected: usize, got: usize },
    #[error("run log: {0}")]
    Recorder(#[from] std::io::Error),
}

impl PartialEq for MoeadError {
    fn eq(&self, other: &Self) -> bool {
        self.to_string() == other.to_string()
    }
}
