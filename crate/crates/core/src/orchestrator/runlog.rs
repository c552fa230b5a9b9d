//! JSON-lines run log: a header, one line per evaluation, a snapshot after
//! every generation and a final line once the archive is retrained.
//! Resuming discards everything after the last snapshot.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::evaluation::scale_for_report;
use crate::moead::{EvalRecord, FinalEntry, RunRecorder, SearchState};

pub const LOG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogLine {
    Header { version: u32, config: Box<RunConfig> },
    Eval(Box<EvalRecord>),
    Snapshot(Box<SearchState>),
    Complete { finals: Vec<FinalEntry> },
}

#[derive(Debug, thiserror::Error)]
pub enum RunLogError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("run log line {line}: {error}")]
    CorruptLine { line: usize, error: String },
    #[error("run log version {found}, expected {expected}")]
    VersionMismatch { found: u64, expected: u32 },
    #[error("run log has no header")]
    MissingHeader,
}

/// What a log holds, up to its last complete generation.
#[derive(Clone, Debug, Default)]
pub struct Replay {
    pub config: Option<RunConfig>,
    pub snapshots: Vec<SearchState>,
    /// Evaluations of completed generations and, if present, the retrain.
    pub evaluations: Vec<EvalRecord>,
    pub finals: Option<Vec<FinalEntry>>,
    /// Byte length of the log prefix that resuming keeps.
    pub resume_offset: u64,
}

impl Replay {
    pub fn last_state(&self) -> Option<&SearchState> {
        self.snapshots.last()
    }

    pub fn is_complete(&self) -> bool {
        self.finals.is_some()
    }

    /// `(generation, f1, f2, params)` per archive member per snapshot, with
    /// objectives multiplied by `scale`.
    pub fn pareto_rows(&self, scale: f64) -> Vec<(usize, f64, f64, u64)> {
        self.snapshots
            .iter()
            .flat_map(|s| {
                s.archive.entries.iter().map(move |e| {
                    let (f1, f2) = scale_for_report(&e.fitness, scale);
                    (s.generation, f1, f2, e.params)
                })
            })
            .collect()
    }
}

/// Reads a log. An empty or missing file is an empty replay. A final line
/// without its newline is a torn write and is ignored.
pub fn replay_log(path: &Path) -> Result<Replay, RunLogError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Replay::default()),
        Err(e) => return Err(e.into()),
    };
    let mut replay = Replay::default();
    let mut pending = Vec::new();
    let mut offset = 0usize;
    for (n, raw) in bytes.split_inclusive(|&b| b == b'\n').enumerate() {
        let line_no = n + 1;
        offset += raw.len();
        if raw.last() != Some(&b'\n') {
            log::warn!("ignoring torn final line {line_no} of {}", path.display());
            break;
        }
        let corrupt = |error: String| RunLogError::CorruptLine { line: line_no, error };
        let text = std::str::from_utf8(&raw[..raw.len() - 1]).map_err(|e| corrupt(e.to_string()))?;
        if text.trim().is_empty() {
            continue;
        }
        if n == 0 {
            let v: serde_json::Value = serde_json::from_str(text).map_err(|e| corrupt(e.to_string()))?;
            if v.get("kind").and_then(|k| k.as_str()) != Some("header") {
                return Err(RunLogError::MissingHeader);
            }
            let found = v.get("version").and_then(|x| x.as_u64()).unwrap_or(0);
            if found != u64::from(LOG_VERSION) {
                return Err(RunLogError::VersionMismatch { found, expected: LOG_VERSION });
            }
        }
        match serde_json::from_str::<LogLine>(text).map_err(|e| corrupt(e.to_string()))? {
            LogLine::Header { config, .. } => {
                if n != 0 {
                    return Err(corrupt("header after first line".into()));
                }
                replay.config = Some(*config);
                replay.resume_offset = offset as u64;
            }
            LogLine::Eval(r) => pending.push(*r),
            LogLine::Snapshot(s) => {
                replay.evaluations.append(&mut pending);
                replay.snapshots.push(*s);
                replay.resume_offset = offset as u64;
            }
            LogLine::Complete { finals } => {
                replay.evaluations.append(&mut pending);
                replay.finals = Some(finals);
                replay.resume_offset = offset as u64;
            }
        }
    }
    Ok(replay)
}

pub struct RunLog {
    file: File,
}

impl RunLog {
    /// Starts a fresh log, replacing any file at `path`.
    pub fn create(path: &Path, config: &RunConfig) -> Result<Self, RunLogError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let file = File::create(path)?;
        let mut log = Self { file };
        log.write(&LogLine::Header { version: LOG_VERSION, config: Box::new(config.clone()) })?;
        Ok(log)
    }

    /// Replays `path`, cuts it back to its last snapshot and reopens it for
    /// appending. Fails with `MissingHeader` on an empty log.
    pub fn resume(path: &Path) -> Result<(Self, Replay), RunLogError> {
        let replay = replay_log(path)?;
        if replay.config.is_none() {
            return Err(RunLogError::MissingHeader);
        }
        let file = OpenOptions::new().write(true).open(path)?;
        file.set_len(replay.resume_offset)?;
        let mut file = OpenOptions::new().append(true).open(path)?;
        file.flush()?;
        Ok((Self { file }, replay))
    }

    fn write(&mut self, line: &LogLine) -> io::Result<()> {
        let mut s = serde_json::to_string(line).map_err(io::Error::other)?;
        s.push('\n');
        self.file.write_all(s.as_bytes())
    }
}

impl RunRecorder for RunLog {
    fn evaluation(&mut self, record: &EvalRecord) -> io::Result<()> {
        self.write(&LogLine::Eval(Box::new(record.clone())))
    }

    fn generation(&mut self, state: &SearchState) -> io::Result<()> {
        self.write(&LogLine::Snapshot(Box::new(state.clone())))?;
        self.file.sync_data()
    }

    fn complete(&mut self, finals: &[FinalEntry]) -> io::Result<()> {
        self.write(&LogLine::Complete { finals: finals.to_vec() })?;
        self.file.sync_data()
    }
}
