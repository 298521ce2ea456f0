//! Single-writer command execution over the durable log.

use std::path::Path;
use std::sync::mpsc;
use std::thread::JoinHandle;

use chrono::{DateTime, Utc};
use tokio::sync::oneshot;
use viscomp_core::ComparisonRecord;

use crate::state::{Command, Experiment, Outcome, QuestionnaireRecord, SessionView};
use crate::store::{LogEntry, Store};
use crate::{ExpError, ExperimentConfig};

/// Source of command timestamps.
pub trait Clock: Send {
    fn now(&self, seq: u64) -> DateTime<Utc>;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self, _seq: u64) -> DateTime<Utc> {
        Utc::now()
    }
}

/// `base + seq` seconds: reproducible timestamps for scripted runs.
pub struct LogicalClock {
    pub base: DateTime<Utc>,
}

impl Default for LogicalClock {
    fn default() -> Self {
        Self {
            base: DateTime::from_timestamp(1_700_000_000, 0).expect("valid timestamp"),
        }
    }
}

impl Clock for LogicalClock {
    fn now(&self, seq: u64) -> DateTime<Utc> {
        self.base + chrono::Duration::seconds(seq as i64)
    }
}

pub struct Engine {
    state: Experiment,
    store: Store,
    clock: Box<dyn Clock>,
    seq: u64,
    snapshot_every: u64,
    /// Set after a failed append; the log no longer matches memory.
    poisoned: bool,
}

impl Engine {
    pub fn open(dir: impl AsRef<Path>, config: &ExperimentConfig, clock: Box<dyn Clock>) -> Result<Self, ExpError> {
        let rec = Store::open(dir, config)?;
        log::info!(
            "opened {} at seq {} ({} entries replayed{})",
            rec.store.dir().display(),
            rec.last_seq,
            rec.replayed,
            if rec.torn_tail { ", torn tail dropped" } else { "" }
        );
        Ok(Self {
            state: rec.state,
            store: rec.store,
            clock,
            seq: rec.last_seq,
            snapshot_every: config.snapshot_every,
            poisoned: false,
        })
    }

    /// Validates, logs, then applies. Nothing is logged for a rejected command.
    pub fn execute(&mut self, cmd: Command) -> Result<Outcome, ExpError> {
        if self.poisoned {
            return Err(ExpError::Storage("event log unavailable after a write failure".into()));
        }
        self.state.validate(&cmd)?;
        let seq = self.seq + 1;
        let entry = LogEntry {
            seq,
            at: self.clock.now(seq),
            cmd,
        };
        if let Err(e) = self.store.append(&entry) {
            self.poisoned = true;
            return Err(e);
        }
        self.seq = seq;
        let outcome = self
            .state
            .apply(&entry.cmd, entry.at)
            .expect("validated commands apply cleanly");
        if self.snapshot_every > 0 && seq.is_multiple_of(self.snapshot_every) {
            if let Err(e) = self.store.snapshot(seq, &self.state) {
                log::warn!("snapshot at seq {seq} failed: {e}");
            }
        }
        Ok(outcome)
    }

    pub fn snapshot(&self) -> Result<(), ExpError> {
        self.store.snapshot(self.seq, &self.state)
    }

    pub fn state(&self) -> &Experiment {
        &self.state
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }
}

type Job = Box<dyn FnOnce(&mut Engine) + Send>;

/// Cloneable handle to an engine running on its own thread. All access,
/// reads included, is serialized through one queue.
#[derive(Clone)]
pub struct Handle {
    tx: mpsc::Sender<Job>,
}

impl Handle {
    pub fn spawn(engine: Engine) -> (Self, JoinHandle<Engine>) {
        let (tx, rx) = mpsc::channel::<Job>();
        let thread = std::thread::Builder::new()
            .name("expserve-writer".into())
            .spawn(move || {
                let mut engine = engine;
                for job in rx {
                    job(&mut engine);
                }
                engine
            })
            .expect("spawn writer thread");
        (Self { tx }, thread)
    }

    fn submit<T: Send + 'static>(&self, f: impl FnOnce(&mut Engine) -> T + Send + 'static) -> oneshot::Receiver<T> {
        let (reply, rx) = oneshot::channel();
        let job: Job = Box::new(move |e| {
            let _ = reply.send(f(e));
        });
        // A closed queue surfaces as a dropped reply.
        let _ = self.tx.send(job);
        rx
    }

    pub async fn ask<T: Send + 'static>(
        &self,
        f: impl FnOnce(&mut Engine) -> T + Send + 'static,
    ) -> Result<T, ExpError> {
        self.submit(f).await.map_err(|_| ExpError::Storage("engine stopped".into()))
    }

    pub fn ask_blocking<T: Send + 'static>(
        &self,
        f: impl FnOnce(&mut Engine) -> T + Send + 'static,
    ) -> Result<T, ExpError> {
        self.submit(f)
            .blocking_recv()
            .map_err(|_| ExpError::Storage("engine stopped".into()))
    }

    pub async fn execute(&self, cmd: Command) -> Result<Outcome, ExpError> {
        self.ask(move |e| e.execute(cmd)).await?
    }

    pub async fn session(&self, id: String) -> Result<SessionView, ExpError> {
        self.ask(move |e| e.state().session_view(&id)).await?
    }

    pub async fn export(&self, include_excluded: bool) -> Result<Vec<ComparisonRecord>, ExpError> {
        self.ask(move |e| e.state().export(include_excluded)).await
    }

    pub async fn questionnaires(&self) -> Result<Vec<QuestionnaireRecord>, ExpError> {
        self.ask(|e| e.state().questionnaires().to_vec()).await
    }
}
