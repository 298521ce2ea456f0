//! Durable storage: an append-only JSONL command log plus snapshots.
//!
//! Layout of the data directory:
//!
//! - `config.json`: the experiment configuration the log was written under
//! - `events.jsonl`: one [`LogEntry`] per line, `seq` strictly increasing
//! - `snapshot.json`: optional [`Snapshot`] replaced atomically

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::state::{Command, Experiment};
use crate::{ExpError, ExperimentConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub at: DateTime<Utc>,
    pub cmd: Command,
}

#[derive(Serialize, Deserialize)]
pub struct Snapshot {
    pub seq: u64,
    pub state: Experiment,
}

const CONFIG_FILE: &str = "config.json";
const LOG_FILE: &str = "events.jsonl";
const SNAPSHOT_FILE: &str = "snapshot.json";

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ExpError + '_ {
    move |e| ExpError::Storage(format!("{}: {e}", path.display()))
}

/// Open handle on a data directory.
pub struct Store {
    dir: PathBuf,
    log: File,
}

/// What was found on disk when opening a store.
pub struct Recovered {
    pub store: Store,
    pub state: Experiment,
    pub last_seq: u64,
    pub replayed: usize,
    pub torn_tail: bool,
}

impl Store {
    /// Opens or creates a store and rebuilds the state: latest snapshot,
    /// then every later log entry. A torn final line (crash mid-append) is
    /// cut off; corruption anywhere else is an error.
    pub fn open(dir: impl AsRef<Path>, config: &ExperimentConfig) -> Result<Recovered, ExpError> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        check_config(&dir, config)?;

        let log_path = dir.join(LOG_FILE);
        let mut log = OpenOptions::new()
            .create(true)
            .read(true)
            .append(true)
            .open(&log_path)
            .map_err(io_err(&log_path))?;
        let (entries, good_len, torn_tail) = read_log(&mut log, &log_path)?;
        if torn_tail {
            log::warn!("dropping torn final line of {}", log_path.display());
            log.set_len(good_len).map_err(io_err(&log_path))?;
        }

        let (mut state, snap_seq) = match load_snapshot(&dir)? {
            Some(s) if entries.last().is_none_or(|e| e.seq >= s.seq) => (s.state, s.seq),
            Some(_) => {
                return Err(ExpError::Storage("snapshot is newer than the event log".into()));
            }
            None => (Experiment::new(config.clone())?, 0),
        };
        state.rebuild_indexes();

        let mut replayed = 0;
        let mut last_seq = snap_seq;
        for e in entries.iter().filter(|e| e.seq > snap_seq) {
            state
                .apply(&e.cmd, e.at)
                .map_err(|err| ExpError::Storage(format!("replay of seq {} failed: {err}", e.seq)))?;
            last_seq = e.seq;
            replayed += 1;
        }
        if let Some(e) = entries.last() {
            last_seq = last_seq.max(e.seq);
        }
        Ok(Recovered {
            store: Store { dir, log },
            state,
            last_seq,
            replayed,
            torn_tail,
        })
    }

    /// Appends one entry and hands it to the operating system before returning.
    pub fn append(&mut self, entry: &LogEntry) -> Result<(), ExpError> {
        let mut line = serde_json::to_string(entry).expect("log entry serializes");
        line.push('\n');
        let path = self.dir.join(LOG_FILE);
        self.log.write_all(line.as_bytes()).map_err(io_err(&path))?;
        self.log.flush().map_err(io_err(&path))
    }

    /// Writes a snapshot through a temporary file and a rename.
    pub fn snapshot(&self, seq: u64, state: &Experiment) -> Result<(), ExpError> {
        let tmp = self.dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        let dest = self.dir.join(SNAPSHOT_FILE);
        let snap = SnapshotRef { seq, state };
        let bytes = serde_json::to_vec(&snap).expect("state serializes");
        let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(&bytes).and_then(|_| f.sync_all()).map_err(io_err(&tmp))?;
        std::fs::rename(&tmp, &dest).map_err(io_err(&dest))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn log_path(&self) -> PathBuf {
        self.dir.join(LOG_FILE)
    }
}

#[derive(Serialize)]
struct SnapshotRef<'a> {
    seq: u64,
    state: &'a Experiment,
}

fn check_config(dir: &Path, config: &ExperimentConfig) -> Result<(), ExpError> {
    let path = dir.join(CONFIG_FILE);
    match std::fs::read_to_string(&path) {
        Ok(text) => {
            let stored: ExperimentConfig = serde_json::from_str(&text)
                .map_err(|e| ExpError::Storage(format!("{}: {e}", path.display())))?;
            if !same_experiment(&stored, config) {
                return Err(ExpError::Config(format!(
                    "data directory {} belongs to a different experiment configuration",
                    dir.display()
                )));
            }
            Ok(())
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            let text = serde_json::to_string_pretty(config).expect("config serializes");
            std::fs::write(&path, text).map_err(io_err(&path))
        }
        Err(e) => Err(io_err(&path)(e)),
    }
}

/// Image location and snapshot cadence do not affect the state.
fn same_experiment(a: &ExperimentConfig, b: &ExperimentConfig) -> bool {
    let strip = |c: &ExperimentConfig| ExperimentConfig {
        image_dir: None,
        snapshot_every: 0,
        ..c.clone()
    };
    strip(a) == strip(b)
}

/// Parsed entries, byte length of the intact prefix, and whether a torn
/// tail was found.
fn read_log(file: &mut File, path: &Path) -> Result<(Vec<LogEntry>, u64, bool), ExpError> {
    file.seek(SeekFrom::Start(0)).map_err(io_err(path))?;
    let mut reader = BufReader::new(&*file);
    let mut entries: Vec<LogEntry> = Vec::new();
    let mut good_len = 0u64;
    let mut buf = String::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        let n = reader.read_line(&mut buf).map_err(io_err(path))?;
        if n == 0 {
            return Ok((entries, good_len, false));
        }
        line_no += 1;
        // The newline is written last, so a line without one never finished.
        if !buf.ends_with('\n') {
            return Ok((entries, good_len, true));
        }
        let e: LogEntry = serde_json::from_str(buf.trim_end())
            .map_err(|e| ExpError::Storage(format!("{}:{line_no}: corrupt entry: {e}", path.display())))?;
        if let Some(prev) = entries.last() {
            if e.seq <= prev.seq {
                return Err(ExpError::Storage(format!(
                    "{}:{line_no}: sequence number {} does not increase",
                    path.display(),
                    e.seq
                )));
            }
        }
        entries.push(e);
        good_len += n as u64;
    }
}

fn load_snapshot(dir: &Path) -> Result<Option<Snapshot>, ExpError> {
    let path = dir.join(SNAPSHOT_FILE);
    match std::fs::read(&path) {
        Ok(bytes) => serde_json::from_slice(&bytes)
            .map(Some)
            .map_err(|e| ExpError::Storage(format!("{}: {e}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(io_err(&path)(e)),
    }
}
