use std::net::TcpStream;
use std::panic::{self, AssertUnwindSafe};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use super::wire::{self, Message, WireError, PROTOCOL_VERSION};
use crate::evaluation::{EvalError, EvalOutcome, JobEvaluator};

#[derive(Clone, Debug)]
pub struct WorkerOptions {
    /// Jobs evaluated concurrently.
    pub capacity: u32,
    /// Consecutive failed connection attempts before giving up.
    pub max_retries: u32,
    pub backoff_initial: Duration,
    pub backoff_max: Duration,
}

impl Default for WorkerOptions {
    fn default() -> Self {
        Self { capacity: 1, max_retries: 8, backoff_initial: Duration::from_millis(200), backoff_max: Duration::from_secs(10) }
    }
}

impl WorkerOptions {
    fn backoff(&self, failures: u32) -> Duration {
        let factor = 1u32 << failures.saturating_sub(1).min(16);
        self.backoff_initial.saturating_mul(factor).min(self.backoff_max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WorkerExit {
    /// The controller asked us to stop.
    Shutdown,
}

enum Session {
    Shutdown,
    Lost(String),
}

/// Connects to a controller and serves jobs until told to shut down,
/// reconnecting with exponential backoff when the connection drops.
pub fn run_worker(addr: &str, evaluator: Arc<dyn JobEvaluator>, opts: &WorkerOptions) -> Result<WorkerExit, EvalError> {
    if opts.capacity == 0 {
        return Err(EvalError::Failed("worker capacity must be at least 1".into()));
    }
    let mut failures = 0u32;
    loop {
        match TcpStream::connect(addr) {
            Ok(stream) => {
                failures = 0;
                match serve(stream, &evaluator, opts.capacity) {
                    Session::Shutdown => return Ok(WorkerExit::Shutdown),
                    Session::Lost(why) => log::warn!("connection to {addr} lost: {why}"),
                }
            }
            Err(e) => {
                failures += 1;
                if failures > opts.max_retries {
                    return Err(EvalError::Connectivity(format!("cannot reach controller at {addr}: {e}")));
                }
                log::info!("connect to {addr} failed ({e}), retry {failures}/{}", opts.max_retries);
            }
        }
        thread::sleep(opts.backoff(failures.max(1)));
    }
}

fn reply(writer: &Mutex<TcpStream>, job_id: u64, outcome: EvalOutcome) {
    let mut w = writer.lock().unwrap_or_else(|e| e.into_inner());
    if let Err(e) = wire::write_message(&mut *w, &Message::Result { job_id, outcome }) {
        log::warn!("cannot send result for job {job_id}: {e}");
    }
}

fn serve(stream: TcpStream, evaluator: &Arc<dyn JobEvaluator>, capacity: u32) -> Session {
    let _ = stream.set_nodelay(true);
    let mut reader = match stream.try_clone() {
        Ok(r) => r,
        Err(e) => return Session::Lost(e.to_string()),
    };
    let writer = Arc::new(Mutex::new(stream));
    {
        let mut w = writer.lock().unwrap_or_else(|e| e.into_inner());
        if let Err(e) = wire::write_message(&mut *w, &Message::Hello { capacity, version: PROTOCOL_VERSION }) {
            return Session::Lost(e.to_string());
        }
    }
    loop {
        match wire::read_message(&mut reader) {
            Ok(Some(Message::Job { job_id, job })) => {
                let writer = Arc::clone(&writer);
                let evaluator = Arc::clone(evaluator);
                thread::spawn(move || {
                    let outcome = match panic::catch_unwind(AssertUnwindSafe(|| evaluator.evaluate(&job))) {
                        Ok(Ok(o)) => o,
                        Ok(Err(e)) => EvalOutcome::failed(e.to_string()),
                        Err(_) => EvalOutcome::failed("evaluator panicked"),
                    };
                    reply(&writer, job_id, outcome);
                });
            }
            Ok(Some(Message::Shutdown)) => return Session::Shutdown,
            Ok(Some(other)) => log::warn!("ignoring unexpected {other:?}"),
            Ok(None) => return Session::Lost("controller closed the connection".into()),
            Err(WireError::Malformed { error, job_id: Some(job_id) }) => {
                log::warn!("malformed job {job_id}: {error}");
                reply(&writer, job_id, EvalOutcome::failed(format!("malformed job: {error}")));
            }
            Err(e @ (WireError::Malformed { .. } | WireError::NotUtf8)) => log::warn!("dropping frame: {e}"),
            Err(e) => return Session::Lost(e.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_grows_and_caps() {
        let o = WorkerOptions {
            backoff_initial: Duration::from_millis(100),
            backoff_max: Duration::from_millis(500),
            ..Default::default()
        };
        assert_eq!(o.backoff(1), Duration::from_millis(100));
        assert_eq!(o.backoff(2), Duration::from_millis(200));
        assert_eq!(o.backoff(3), Duration::from_millis(400));
        assert_eq!(o.backoff(4), Duration::from_millis(500));
        assert_eq!(o.backoff(40), Duration::from_millis(500));
    }

    #[test]
    fn unreachable_controller_is_connectivity_error() {
        let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
        let o = WorkerOptions { max_retries: 1, backoff_initial: Duration::from_millis(1), ..Default::default() };
        struct Never;
        impl JobEvaluator for Never {
            fn evaluate(&self, _: &crate::evaluation::EvalJob) -> Result<EvalOutcome, EvalError> {
                unreachable!()
            }
        }
        let r = run_worker(&port.to_string(), Arc::new(Never), &o);
        assert!(matches!(r, Err(EvalError::Connectivity(_))), "{r:?}");
    }
}
