//! Distributing evaluations to workers over TCP, and the run log.

mod controller;
pub mod runlog;
mod worker;
pub mod wire;

pub use controller::{Controller, ControllerOptions, ControllerStats};
pub use runlog::{replay_log, LogLine, Replay, RunLog, RunLogError, LOG_VERSION};
pub use worker::{run_worker, WorkerExit, WorkerOptions};
