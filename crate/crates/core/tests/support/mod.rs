#![allow(dead_code)]

use std::net::{SocketAddr, TcpStream};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use resnas::evaluation::{EvalJob, EvalOutcome, SurrogateConfig, SurrogateEvaluator, TrainingParams};
use resnas::genome::{decode, random_genome, SearchSpaceConfig};
use resnas::orchestrator::wire::{self, Message, PROTOCOL_VERSION};
use resnas::orchestrator::{run_worker, WorkerExit, WorkerOptions};

pub fn jobs(n: usize, seed: u64) -> Vec<EvalJob> {
    let cfg = SearchSpaceConfig::mnist();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n as u64)
        .map(|job_id| {
            let genome = random_genome(&cfg, &mut rng);
            let spec = decode(&genome, &cfg).unwrap();
            EvalJob { job_id, genome, spec, epochs: 1, training: TrainingParams::default(), dataset: "mnist".into(), seed: job_id }
        })
        .collect()
}

pub fn surrogate() -> SurrogateEvaluator {
    SurrogateEvaluator::new(SearchSpaceConfig::mnist(), SurrogateConfig::default())
}

pub fn spawn_worker(addr: SocketAddr, capacity: u32) -> JoinHandle<Result<WorkerExit, resnas::evaluation::EvalError>> {
    thread::spawn(move || {
        let opts = WorkerOptions { capacity, max_retries: 3, backoff_initial: Duration::from_millis(20), ..Default::default() };
        run_worker(&addr.to_string(), Arc::new(surrogate()), &opts)
    })
}

/// A hand-driven worker connection.
pub struct Stub {
    pub stream: TcpStream,
}

impl Stub {
    pub fn connect(addr: SocketAddr, capacity: u32) -> Self {
        let mut stream = TcpStream::connect(addr).unwrap();
        wire::write_message(&mut stream, &Message::Hello { capacity, version: PROTOCOL_VERSION }).unwrap();
        Self { stream }
    }

    pub fn next_job(&mut self) -> Option<EvalJob> {
        match wire::read_message(&mut self.stream) {
            Ok(Some(Message::Job { job, .. })) => Some(*job),
            _ => None,
        }
    }

    pub fn answer(&mut self, job: &EvalJob) {
        use resnas::evaluation::JobEvaluator;
        let outcome = surrogate().evaluate(job).unwrap_or_else(|e| EvalOutcome::failed(e.to_string()));
        wire::write_message(&mut self.stream, &Message::Result { job_id: job.job_id, outcome }).unwrap();
    }
}
