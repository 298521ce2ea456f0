//! Pairwise-comparison experiment service.
//!
//! Raters get trials one at a time. Pairs still short of their rater quota
//! are served first; otherwise a fresh pair is drawn with weights
//! `1 / (1 + times selected)`. Each session carries a few attention checks,
//! and a session that fails more than one is excluded and its pair slots go
//! back into the queue.
//!
//! Every accepted command is appended to `events.jsonl` before it takes
//! effect, so restarting on the same data directory replays to the exact
//! state the service had when it stopped.

pub mod config;
pub mod engine;
pub mod http;
pub mod state;
pub mod store;

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use thiserror::Error;

pub use config::ExperimentConfig;
pub use engine::{Clock, Engine, Handle, LogicalClock, SystemClock};
pub use state::{Command, Experiment, Outcome, SessionStatus, SessionView, TrialView};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExpError {
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("storage: {0}")]
    Storage(String),
}

/// A running HTTP server with its writer thread.
pub struct Server {
    addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<Result<(), ExpError>>>,
}

impl Server {
    /// Opens the data directory, replays it and starts serving on `addr`
    /// (port 0 picks a free port). Stops on [`Server::stop`] or Ctrl-C.
    pub fn start(
        config: ExperimentConfig,
        data_dir: &Path,
        addr: SocketAddr,
        clock: Box<dyn Clock>,
    ) -> Result<Self, ExpError> {
        let engine = Engine::open(data_dir, &config, clock)?;
        let (handle, writer) = Handle::spawn(engine);
        let app = http::router(http::AppState {
            handle: handle.clone(),
            config: Arc::new(config),
        });
        let (addr_tx, addr_rx) = std::sync::mpsc::channel();
        let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || -> Result<(), ExpError> {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| ExpError::Storage(format!("runtime: {e}")))?;
            let served = rt.block_on(async move {
                let listener = match tokio::net::TcpListener::bind(addr).await {
                    Ok(l) => l,
                    Err(e) => {
                        let err = ExpError::Config(format!("cannot bind {addr}: {e}"));
                        let _ = addr_tx.send(Err(err.clone()));
                        return Err(err);
                    }
                };
                let local = listener.local_addr().map_err(|e| ExpError::Config(e.to_string()))?;
                let _ = addr_tx.send(Ok(local));
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        tokio::select! {
                            _ = stop_rx => {}
                            _ = tokio::signal::ctrl_c() => {}
                        }
                    })
                    .await
                    .map_err(|e| ExpError::Storage(format!("server: {e}")))
            });
            let snap = handle.ask_blocking(|e| e.snapshot()).and_then(|r| r);
            drop(handle);
            let _ = writer.join();
            served.and(snap)
        });
        let addr = addr_rx
            .recv()
            .map_err(|_| ExpError::Storage("server thread exited before binding".into()))??;
        Ok(Self {
            addr,
            shutdown: Some(stop_tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Graceful stop with a final snapshot.
    pub fn stop(mut self) -> Result<(), ExpError> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.join()
    }

    /// Blocks until the server exits.
    pub fn join(mut self) -> Result<(), ExpError> {
        match self.thread.take().map(|t| t.join()) {
            Some(Ok(r)) => r,
            Some(Err(_)) => Err(ExpError::Storage("server thread panicked".into())),
            None => Ok(()),
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Serves until interrupted, then writes a final snapshot.
/// Prints `listening on http://ADDR` once the socket is bound.
pub fn run(config: ExperimentConfig, data_dir: &Path, addr: SocketAddr, clock: Box<dyn Clock>) -> Result<(), ExpError> {
    let server = Server::start(config, data_dir, addr, clock)?;
    println!("listening on http://{}", server.addr());
    server.join()
}
