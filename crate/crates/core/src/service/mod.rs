//! TCP preprocessing service.
//!
//! One connection is one session, pinned to one engine slot for its
//! lifetime. The client opens with a CONFIG frame carrying a pipeline
//! description; the server answers ACK (header slot id = assigned slot) or an
//! ERROR frame whose payload starts with `BUSY` when every slot is taken.
//! Both directions then carry a schema DATA frame, DATA frames and END.
//!
//! Stateless sessions stream: output is sent while input is still arriving,
//! so the client must read concurrently with writing. Its read rate throttles
//! the server. Stateful sessions spool the input to a temporary column file
//! (directory from `MINIPIPE_SPOOL_DIR`, else the system temp dir) during
//! the first pass and answer after the second.

mod client;
mod session;

use std::collections::HashMap;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use thiserror::Error;
use tracing::{info, warn};

use crate::pipeline::{Engine, EngineConfig, PipelineError, PipelineSpec};
use crate::transport::TransportError;

pub use client::{
    preprocess_batch, preprocess_remote, preprocess_stream, ClientError, RemoteBatches,
};
pub use session::{SessionPhase, SessionState, SessionSummary};

/// Environment variable naming the spool directory.
pub const SPOOL_DIR_ENV: &str = "MINIPIPE_SPOOL_DIR";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: std::io::Error,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("all {slots} slots are in use")]
    Busy { slots: usize },
    #[error("unconfigured session: first frame was {0}, expected CONFIG")]
    Unconfigured(String),
    #[error("invalid CONFIG: {0}")]
    InvalidConfig(String),
    #[error("service aborted")]
    Aborted,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ServiceStats {
    pub sessions_started: u64,
    pub sessions_completed: u64,
    pub sessions_failed: u64,
    pub busy_rejections: u64,
    pub spools_created: u64,
}

#[derive(Debug, Default)]
struct Counters {
    started: AtomicU64,
    completed: AtomicU64,
    failed: AtomicU64,
    busy: AtomicU64,
    spools: AtomicU64,
}

struct Registered {
    stream: TcpStream,
    state: SessionState,
}

struct Inner {
    engine: Engine,
    reserved: Mutex<Vec<bool>>,
    sessions: Mutex<HashMap<u64, Registered>>,
    workers: Mutex<Vec<JoinHandle<()>>>,
    next_id: AtomicU64,
    stopping: AtomicBool,
    aborted: Arc<AtomicBool>,
    counters: Counters,
}

/// Session logic shared by the acceptor and by callers that already hold a
/// connection. Cloning yields another handle to the same service state.
#[derive(Clone)]
pub struct Service {
    inner: Arc<Inner>,
}

/// A held slot; released on drop.
struct SlotLease<'a> {
    inner: &'a Inner,
    slot: usize,
}

impl Drop for SlotLease<'_> {
    fn drop(&mut self) {
        lock(&self.inner.reserved)[self.slot] = false;
    }
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

/// Spool directory: the configured one, else `MINIPIPE_SPOOL_DIR`, else the
/// system temp dir.
pub fn resolve_spool_dir(configured: Option<PathBuf>) -> PathBuf {
    configured
        .or_else(|| std::env::var_os(SPOOL_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(std::env::temp_dir)
}

impl Service {
    pub fn new(mut config: EngineConfig) -> Result<Self, ServiceError> {
        config.spool_dir = Some(resolve_spool_dir(config.spool_dir.take()));
        let engine = Engine::new(config)?;
        let slots = engine.slot_count();
        Ok(Self {
            inner: Arc::new(Inner {
                engine,
                reserved: Mutex::new(vec![false; slots]),
                sessions: Mutex::new(HashMap::new()),
                workers: Mutex::new(Vec::new()),
                next_id: AtomicU64::new(1),
                stopping: AtomicBool::new(false),
                aborted: Arc::new(AtomicBool::new(false)),
                counters: Counters::default(),
            }),
        })
    }

    pub fn engine(&self) -> &Engine {
        &self.inner.engine
    }

    /// Slots not held by a session.
    pub fn available_slots(&self) -> usize {
        lock(&self.inner.reserved).iter().filter(|r| !**r).count()
    }

    pub fn stats(&self) -> ServiceStats {
        let c = &self.inner.counters;
        ServiceStats {
            sessions_started: c.started.load(Ordering::Relaxed),
            sessions_completed: c.completed.load(Ordering::Relaxed),
            sessions_failed: c.failed.load(Ordering::Relaxed),
            busy_rejections: c.busy.load(Ordering::Relaxed),
            spools_created: c.spools.load(Ordering::Relaxed),
        }
    }

    /// Snapshot of live sessions.
    pub fn sessions(&self) -> Vec<SessionState> {
        let sessions = lock(&self.inner.sessions);
        let mut out: Vec<SessionState> = sessions
            .values()
            .map(|r| {
                let mut s = r.state.clone();
                if let Some(slot) = s.slot_id {
                    if let Ok(slot) = self.inner.engine.slot(slot) {
                        s.refresh(slot.phase());
                    }
                }
                s
            })
            .collect();
        out.sort_by_key(|s| s.session_id);
        out
    }

    fn acquire(&self, spec: &PipelineSpec) -> Option<SlotLease<'_>> {
        let mut reserved = lock(&self.inner.reserved);
        let free = (0..reserved.len()).find(|&i| {
            !reserved[i]
                && self
                    .inner
                    .engine
                    .slot(i)
                    .map(|s| !s.is_quarantined())
                    .unwrap_or(false)
        })?;
        reserved[free] = true;
        drop(reserved);
        let lease = SlotLease {
            inner: &self.inner,
            slot: free,
        };
        // The slot is reserved and idle, so this swap is immediate.
        self.inner.engine.reconfigure(free, spec.clone()).ok()?;
        Some(lease)
    }

    fn update(&self, id: u64, f: impl FnOnce(&mut SessionState)) {
        if let Some(r) = lock(&self.inner.sessions).get_mut(&id) {
            f(&mut r.state);
        }
    }

    fn is_aborted(&self) -> bool {
        self.inner.aborted.load(Ordering::Acquire)
    }
}

/// A running server.
pub struct ServiceHandle {
    service: Service,
    local_addr: SocketAddr,
    acceptor: Option<JoinHandle<()>>,
}

/// Binds `bind` and starts accepting sessions on a background thread.
pub fn serve(
    bind: impl ToSocketAddrs,
    config: EngineConfig,
) -> Result<ServiceHandle, ServiceError> {
    let addrs: Vec<SocketAddr> = bind
        .to_socket_addrs()
        .map_err(|source| ServiceError::Bind {
            addr: "<unresolved>".into(),
            source,
        })?
        .collect();
    let listener = TcpListener::bind(&addrs[..]).map_err(|source| ServiceError::Bind {
        addr: addrs
            .iter()
            .map(|a| a.to_string())
            .collect::<Vec<_>>()
            .join(","),
        source,
    })?;
    let service = Service::new(config)?;
    let local_addr = listener.local_addr()?;
    listener.set_nonblocking(true)?;
    info!(%local_addr, slots = service.engine().slot_count(), "serving");
    let acceptor_service = service.clone();
    let acceptor = thread::Builder::new()
        .name("minipipe-accept".into())
        .spawn(move || accept_loop(listener, acceptor_service))?;
    Ok(ServiceHandle {
        service,
        local_addr,
        acceptor: Some(acceptor),
    })
}

fn accept_loop(listener: TcpListener, service: Service) {
    let inner = &service.inner;
    while !inner.stopping.load(Ordering::Acquire) {
        match listener.accept() {
            Ok((stream, peer)) => {
                if let Err(e) = stream.set_nonblocking(false) {
                    warn!(%peer, "dropping connection: {e}");
                    continue;
                }
                let _ = stream.set_nodelay(true);
                let worker = service.clone();
                let spawned = thread::Builder::new()
                    .name(format!("minipipe-session-{peer}"))
                    .spawn(move || {
                        if let Err(e) = worker.handle_session(stream) {
                            tracing::debug!(%peer, "session ended with error: {e}");
                        }
                    });
                match spawned {
                    Ok(handle) => {
                        let mut workers = lock(&inner.workers);
                        workers.retain(|h| !h.is_finished());
                        workers.push(handle);
                    }
                    Err(e) => warn!("cannot spawn session thread: {e}"),
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                thread::sleep(Duration::from_millis(2))
            }
            Err(e) => {
                warn!("accept failed: {e}");
                thread::sleep(Duration::from_millis(10));
            }
        }
    }
}

impl ServiceHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn service(&self) -> &Service {
        &self.service
    }

    pub fn available_slots(&self) -> usize {
        self.service.available_slots()
    }

    pub fn stats(&self) -> ServiceStats {
        self.service.stats()
    }

    fn stop_accepting(&mut self) {
        self.service.inner.stopping.store(true, Ordering::Release);
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
    }

    fn join_sessions(&self) {
        loop {
            let next = lock(&self.service.inner.workers).pop();
            match next {
                Some(h) => {
                    let _ = h.join();
                }
                None => break,
            }
        }
    }

    /// Stops accepting and waits for running sessions to finish.
    pub fn shutdown(mut self) -> ServiceStats {
        self.stop_accepting();
        self.join_sessions();
        self.service.stats()
    }

    /// Stops accepting and fails running sessions: each gets an ERROR frame
    /// and is closed.
    pub fn abort(mut self) -> ServiceStats {
        self.stop_accepting();
        self.service.inner.aborted.store(true, Ordering::Release);
        for r in lock(&self.service.inner.sessions).values() {
            // Wakes readers blocked on the client; the write half stays
            // open for the ERROR frame.
            let _ = r.stream.shutdown(Shutdown::Read);
        }
        self.join_sessions();
        self.service.stats()
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        if self.acceptor.is_some() {
            self.stop_accepting();
            self.service.inner.aborted.store(true, Ordering::Release);
            for r in lock(&self.service.inner.sessions).values() {
                let _ = r.stream.shutdown(Shutdown::Read);
            }
            self.join_sessions();
        }
    }
}
