use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::io;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::wire::{self, Message, PROTOCOL_VERSION};
use crate::config::RemoteConfig;
use crate::evaluation::{BatchEvaluator, EvalError, EvalJob, EvalOutcome};

#[derive(Clone, Debug)]
pub struct ControllerOptions {
    /// An assignment older than this is handed to another slot.
    pub job_timeout: Duration,
    /// Assignments per job before it is recorded as failed.
    pub max_attempts: u32,
    /// How long a batch may sit with queued jobs and no live worker.
    pub connect_timeout: Duration,
}

impl Default for ControllerOptions {
    fn default() -> Self {
        Self { job_timeout: Duration::from_secs(3600), max_attempts: 3, connect_timeout: Duration::from_secs(120) }
    }
}

impl From<&RemoteConfig> for ControllerOptions {
    fn from(r: &RemoteConfig) -> Self {
        Self {
            job_timeout: Duration::from_secs(r.job_timeout_secs),
            max_attempts: r.max_attempts,
            connect_timeout: Duration::from_secs(r.connect_timeout_secs),
        }
    }
}

/// Counters kept across batches.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ControllerStats {
    pub assignments: u64,
    pub reissues: u64,
    /// Results for jobs that were already resolved or not pending.
    pub ignored_results: u64,
    pub workers_lost: u64,
}

enum Event {
    Connected(u64, TcpStream),
    Frame(u64, Message),
    Bad(u64, String),
    Gone(u64),
}

struct Peer {
    stream: TcpStream,
    capacity: usize,
    in_flight: HashSet<u64>,
}

struct Batch<'a> {
    jobs: &'a [EvalJob],
    index: HashMap<u64, usize>,
    results: Vec<Option<EvalOutcome>>,
    attempts: Vec<u32>,
    live: Vec<Option<(u64, Instant)>>,
    queue: VecDeque<usize>,
    remaining: usize,
}

impl<'a> Batch<'a> {
    fn new(jobs: &'a [EvalJob]) -> Result<Self, EvalError> {
        let index: HashMap<u64, usize> = jobs.iter().enumerate().map(|(i, j)| (j.job_id, i)).collect();
        if index.len() != jobs.len() {
            return Err(EvalError::Failed("duplicate job ids in batch".into()));
        }
        let n = jobs.len();
        Ok(Self {
            jobs,
            index,
            results: vec![None; n],
            attempts: vec![0; n],
            live: vec![None; n],
            queue: (0..n).collect(),
            remaining: n,
        })
    }

    fn resolve(&mut self, idx: usize, outcome: EvalOutcome) {
        self.results[idx] = Some(outcome);
        self.live[idx] = None;
        self.remaining -= 1;
    }
}

/// Owns the listening socket and every worker connection. Reader threads
/// only forward frames; all bookkeeping happens on the caller's thread.
pub struct Controller {
    addr: SocketAddr,
    rx: Receiver<Event>,
    peers: BTreeMap<u64, Peer>,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
    opts: ControllerOptions,
    stats: ControllerStats,
}

impl Controller {
    pub fn bind<A: ToSocketAddrs>(addr: A, opts: ControllerOptions) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let (tx, rx) = mpsc::channel();
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let acceptor = thread::Builder::new()
            .name("resnas-accept".into())
            .spawn(move || accept_loop(listener, tx, flag))?;
        Ok(Self { addr, rx, peers: BTreeMap::new(), stop, acceptor: Some(acceptor), opts, stats: ControllerStats::default() })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> &ControllerStats {
        &self.stats
    }

    /// Workers that have said hello.
    pub fn ready_workers(&self) -> usize {
        self.peers.values().filter(|p| p.capacity > 0).count()
    }

    pub fn wait_for_workers(&mut self, n: usize, timeout: Duration) -> Result<(), EvalError> {
        let deadline = Instant::now() + timeout;
        let mut idle = Batch::new(&[])?;
        while self.ready_workers() < n {
            let now = Instant::now();
            if now >= deadline {
                return Err(EvalError::Connectivity(format!(
                    "{} of {n} workers connected to {} within {:?}",
                    self.ready_workers(),
                    self.addr,
                    timeout
                )));
            }
            self.pump((deadline - now).min(Duration::from_millis(50)), &mut idle);
        }
        Ok(())
    }

    /// Asks every worker to exit and closes the connections.
    pub fn shutdown(&mut self) {
        for (_, mut p) in std::mem::take(&mut self.peers) {
            let _ = wire::write_message(&mut p.stream, &Message::Shutdown);
            let _ = p.stream.shutdown(Shutdown::Both);
        }
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }

    fn pump(&mut self, wait: Duration, batch: &mut Batch<'_>) {
        match self.rx.recv_timeout(wait) {
            Ok(ev) => self.handle(ev, batch),
            Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => {}
        }
    }

    fn handle(&mut self, ev: Event, batch: &mut Batch<'_>) {
        match ev {
            Event::Connected(id, stream) => {
                self.peers.insert(id, Peer { stream, capacity: 0, in_flight: HashSet::new() });
            }
            Event::Frame(id, Message::Hello { capacity, version }) => {
                if version != PROTOCOL_VERSION || capacity == 0 {
                    log::warn!("worker {id}: rejected hello (version {version}, capacity {capacity})");
                    if let Some(p) = self.peers.get_mut(&id) {
                        let _ = wire::write_message(&mut p.stream, &Message::Shutdown);
                    }
                    self.drop_peer(id, batch);
                } else if let Some(p) = self.peers.get_mut(&id) {
                    log::info!("worker {id} ready with capacity {capacity}");
                    p.capacity = capacity as usize;
                }
            }
            Event::Frame(id, Message::Result { job_id, outcome }) => {
                if let Some(p) = self.peers.get_mut(&id) {
                    p.in_flight.remove(&job_id);
                }
                match batch.index.get(&job_id) {
                    Some(&idx) if batch.results[idx].is_none() => batch.resolve(idx, outcome),
                    _ => {
                        log::debug!("ignoring result for job {job_id} from worker {id}");
                        self.stats.ignored_results += 1;
                    }
                }
            }
            Event::Frame(id, other) => {
                log::warn!("worker {id}: unexpected {other:?}");
                self.drop_peer(id, batch);
            }
            Event::Bad(id, e) => {
                log::warn!("worker {id}: {e}");
                self.drop_peer(id, batch);
            }
            Event::Gone(id) => self.drop_peer(id, batch),
        }
    }

    fn drop_peer(&mut self, id: u64, batch: &mut Batch<'_>) {
        let Some(p) = self.peers.remove(&id) else { return };
        let _ = p.stream.shutdown(Shutdown::Both);
        if p.capacity > 0 {
            self.stats.workers_lost += 1;
        }
        let mut lost: Vec<usize> = p
            .in_flight
            .iter()
            .filter_map(|j| batch.index.get(j).copied())
            .filter(|&i| batch.results[i].is_none() && batch.live[i].is_some_and(|(w, _)| w == id))
            .collect();
        lost.sort_unstable();
        for idx in lost.into_iter().rev() {
            batch.live[idx] = None;
            self.retry_or_fail(idx, batch, "worker disconnected");
        }
    }

    fn retry_or_fail(&mut self, idx: usize, batch: &mut Batch<'_>, reason: &str) {
        if batch.attempts[idx] < self.opts.max_attempts {
            self.stats.reissues += 1;
            batch.queue.push_front(idx);
        } else {
            let note = format!("{reason} after {} attempts", batch.attempts[idx]);
            log::warn!("job {}: {note}", batch.jobs[idx].job_id);
            batch.resolve(idx, EvalOutcome::failed(note));
        }
    }

    fn dispatch(&mut self, batch: &mut Batch<'_>) {
        let mut broken = Vec::new();
        for (&id, p) in self.peers.iter_mut() {
            while p.capacity > 0 && p.in_flight.len() < p.capacity {
                let Some(idx) = batch.queue.pop_front() else { break };
                let job = &batch.jobs[idx];
                let msg = Message::Job { job_id: job.job_id, job: Box::new(job.clone()) };
                if wire::write_message(&mut p.stream, &msg).is_err() {
                    batch.queue.push_front(idx);
                    broken.push(id);
                    break;
                }
                batch.attempts[idx] += 1;
                batch.live[idx] = Some((id, Instant::now() + self.opts.job_timeout));
                p.in_flight.insert(job.job_id);
                self.stats.assignments += 1;
            }
        }
        for id in broken {
            self.drop_peer(id, batch);
        }
    }

    fn expire(&mut self, batch: &mut Batch<'_>) {
        let now = Instant::now();
        for idx in 0..batch.jobs.len() {
            if let Some((peer, deadline)) = batch.live[idx] {
                if batch.results[idx].is_none() && deadline <= now {
                    // The slot is released; a late answer is still accepted.
                    if let Some(p) = self.peers.get_mut(&peer) {
                        p.in_flight.remove(&batch.jobs[idx].job_id);
                    }
                    batch.live[idx] = None;
                    self.retry_or_fail(idx, batch, "timed out");
                }
            }
        }
    }
}

impl BatchEvaluator for Controller {
    fn evaluate_batch(&mut self, jobs: &[EvalJob]) -> Result<Vec<EvalOutcome>, EvalError> {
        let mut batch = Batch::new(jobs)?;
        let mut stranded_since: Option<Instant> = None;
        while batch.remaining > 0 {
            self.dispatch(&mut batch);
            self.expire(&mut batch);
            let now = Instant::now();
            if self.ready_workers() == 0 && !batch.queue.is_empty() {
                let since = *stranded_since.get_or_insert(now);
                if now - since >= self.opts.connect_timeout {
                    return Err(EvalError::Connectivity(format!(
                        "no worker connected to {} for {:?} with {} jobs pending",
                        self.addr, self.opts.connect_timeout, batch.remaining
                    )));
                }
            } else {
                stranded_since = None;
            }
            let next_deadline = batch.live.iter().flatten().map(|&(_, d)| d).min();
            let mut wait = Duration::from_millis(50);
            if let Some(d) = next_deadline {
                wait = wait.min(d.saturating_duration_since(now));
            }
            self.pump(wait, &mut batch);
        }
        Ok(batch.results.into_iter().map(|r| r.expect("resolved")).collect())
    }
}

impl Drop for Controller {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn accept_loop(listener: TcpListener, tx: Sender<Event>, stop: Arc<AtomicBool>) {
    let mut next_id = 0u64;
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                next_id += 1;
                let id = next_id;
                log::debug!("connection {id} from {peer}");
                if stream.set_nonblocking(false).is_err() {
                    continue;
                }
                let _ = stream.set_nodelay(true);
                let Ok(mut reader) = stream.try_clone() else { continue };
                if tx.send(Event::Connected(id, stream)).is_err() {
                    return;
                }
                let tx = tx.clone();
                let spawned = thread::Builder::new().name(format!("resnas-peer-{id}")).spawn(move || {
                    loop {
                        match wire::read_message(&mut reader) {
                            Ok(Some(m)) => {
                                if tx.send(Event::Frame(id, m)).is_err() {
                                    return;
                                }
                            }
                            Ok(None) => break,
                            Err(wire::WireError::Io(_)) => break,
                            Err(e) => {
                                let _ = tx.send(Event::Bad(id, e.to_string()));
                                return;
                            }
                        }
                    }
                    let _ = tx.send(Event::Gone(id));
                });
                if spawned.is_err() {
                    log::error!("cannot spawn reader for connection {id}");
                }
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(10)),
            Err(e) => {
                log::warn!("accept failed: {e}");
                thread::sleep(Duration::from_millis(10));
            }
        }
    }
}
