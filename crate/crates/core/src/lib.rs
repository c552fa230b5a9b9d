pub mod config;
pub mod evaluation;
pub mod fixtures;
pub mod genome;
pub mod moead;
pub mod orchestrator;
pub mod parallel;
pub mod variation;
