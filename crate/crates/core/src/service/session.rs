use std::io::{BufWriter, Read};
use std::net::{Shutdown, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use tracing::debug;

use crate::colfmt::ColumnFileHeader;
use crate::pipeline::{compile_spec, Phase, PipelineSpec};
use crate::transport::{
    read_frame, Arbiter, FrameSource, FrameType, FrameWriter, NetworkSink, NetworkSource,
    StreamFrame, TransportError,
};

use super::{lock, Registered, Service, ServiceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionPhase {
    Configuring,
    Pass1,
    Pass2,
    Streaming,
    Closed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub session_id: u64,
    pub slot_id: Option<usize>,
    pub spec: Option<PipelineSpec>,
    pub phase: SessionPhase,
    /// Whether the input was spooled to a temporary file.
    pub spooled: bool,
}

impl SessionState {
    fn new(session_id: u64) -> Self {
        Self {
            session_id,
            slot_id: None,
            spec: None,
            phase: SessionPhase::Configuring,
            spooled: false,
        }
    }

    pub(super) fn refresh(&mut self, phase: Option<Phase>) {
        if self.phase == SessionPhase::Closed {
            return;
        }
        match phase {
            Some(Phase::Streaming) => self.phase = SessionPhase::Streaming,
            Some(Phase::Pass1) => {
                self.phase = SessionPhase::Pass1;
                self.spooled = true;
            }
            Some(Phase::Pass2) => self.phase = SessionPhase::Pass2,
            None => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionSummary {
    pub session_id: u64,
    pub slot_id: usize,
    pub spec_id: String,
    pub rows: u64,
    pub input_bytes: u64,
    pub output_bytes: u64,
    pub spooled: bool,
}

/// Fails reads once the service is aborting.
struct AbortableSource {
    inner: NetworkSource,
    aborted: Arc<AtomicBool>,
}

impl AbortableSource {
    fn check(&self) -> Result<(), TransportError> {
        if self.aborted.load(Ordering::Acquire) {
            Err(TransportError::Aborted("service is shutting down".into()))
        } else {
            Ok(())
        }
    }
}

impl FrameSource for AbortableSource {
    fn header(&self) -> &ColumnFileHeader {
        self.inner.header()
    }

    fn next_frame(&mut self) -> Result<Option<StreamFrame>, TransportError> {
        self.check()?;
        let r = self.inner.next_frame();
        if r.is_err() {
            self.check()?;
        }
        r
    }

    fn is_replayable(&self) -> bool {
        false
    }

    fn rewind(&mut self) -> Result<(), TransportError> {
        Err(TransportError::NotReplayable)
    }
}

/// Sends an ERROR frame, half-closes and waits briefly for the peer to
/// close, so the ERROR is not lost to a reset.
fn fail<W: std::io::Write>(writer: &mut FrameWriter<W>, stream: &TcpStream, message: &str) {
    let _ = writer.send_error(message);
    linger_close(stream);
}

fn linger_close(stream: &TcpStream) {
    let _ = stream.shutdown(Shutdown::Write);
    let deadline = Instant::now() + Duration::from_secs(2);
    let _ = stream.set_read_timeout(Some(Duration::from_millis(50)));
    let mut buf = [0u8; 8192];
    let mut s = stream;
    while Instant::now() < deadline {
        match s.read(&mut buf) {
            Ok(0) => break,
            Ok(_) => {}
            Err(e)
                if matches!(
                    e.kind(),
                    std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut
                ) => {}
            Err(_) => break,
        }
    }
}

impl Service {
    /// Serves one session on an accepted connection.
    pub fn handle_session(&self, stream: TcpStream) -> Result<SessionSummary, ServiceError> {
        let inner = &self.inner;
        let id = inner.next_id.fetch_add(1, Ordering::Relaxed);
        inner.counters.started.fetch_add(1, Ordering::Relaxed);
        lock(&inner.sessions).insert(
            id,
            Registered {
                stream: stream.try_clone()?,
                state: SessionState::new(id),
            },
        );
        if self.is_aborted() {
            let _ = stream.shutdown(Shutdown::Read);
        }
        let result = self.session(id, stream);
        lock(&inner.sessions).remove(&id);
        match &result {
            Ok(_) => inner.counters.completed.fetch_add(1, Ordering::Relaxed),
            Err(_) => inner.counters.failed.fetch_add(1, Ordering::Relaxed),
        };
        result
    }

    fn session(&self, id: u64, stream: TcpStream) -> Result<SessionSummary, ServiceError> {
        let config = self.inner.engine.config();
        let mut writer =
            FrameWriter::new(BufWriter::with_capacity(1 << 16, stream.try_clone()?), 0);

        let mut raw = &stream;
        let first = match read_frame(&mut raw, config.max_payload) {
            Ok(Some(f)) => f,
            Ok(None) => {
                debug!(session = id, "closed before CONFIG");
                return Err(ServiceError::Unconfigured("end of stream".into()));
            }
            Err(e) => {
                fail(&mut writer, &stream, &format!("protocol error: {e}"));
                return Err(e.into());
            }
        };
        if first.frame_type() != FrameType::Config {
            let kind = first.frame_type().to_string();
            fail(
                &mut writer,
                &stream,
                &format!("unconfigured session: got {kind} before CONFIG"),
            );
            return Err(ServiceError::Unconfigured(kind));
        }
        let mut arbiter = Arbiter::new(config.queue_depth);
        if let Err(e) = arbiter.push(first.clone()) {
            fail(&mut writer, &stream, &format!("protocol error: {e}"));
            return Err(e.into());
        }
        let text = match std::str::from_utf8(&first.payload) {
            Ok(t) => t,
            Err(_) => {
                fail(
                    &mut writer,
                    &stream,
                    "invalid CONFIG: pipeline text is not UTF-8",
                );
                return Err(ServiceError::InvalidConfig("not UTF-8".into()));
            }
        };
        let spec = match compile_spec(text) {
            Ok(s) => s,
            Err(e) => {
                fail(&mut writer, &stream, &format!("invalid CONFIG: {e}"));
                return Err(ServiceError::InvalidConfig(e.to_string()));
            }
        };

        let Some(lease) = self.acquire(&spec) else {
            self.inner.counters.busy.fetch_add(1, Ordering::Relaxed);
            let slots = self.inner.engine.slot_count();
            fail(
                &mut writer,
                &stream,
                &format!("BUSY: all {slots} slots in use, retry later"),
            );
            return Err(ServiceError::Busy { slots });
        };
        let slot_id = lease.slot;
        self.update(id, |s| {
            s.slot_id = Some(slot_id);
            s.spec = Some(spec.clone());
        });
        debug!(session = id, slot = slot_id, spec = %spec, "configured");

        let mut writer = FrameWriter::new(writer.into_inner(), slot_id as u8);
        writer.send(FrameType::Ack, 0, spec.id().as_bytes())?;
        writer.flush()?;

        let source = match NetworkSource::from_stream(stream.try_clone()?, arbiter) {
            Ok(s) => s,
            Err(e) => {
                let e = if self.is_aborted() {
                    TransportError::Aborted("service is shutting down".into())
                } else {
                    e
                };
                fail(&mut writer, &stream, &e.to_string());
                return Err(e.into());
            }
        };
        let mut source = AbortableSource {
            inner: source,
            aborted: self.inner.aborted.clone(),
        };
        let mut sink = NetworkSink::new(writer);
        let slot = self.inner.engine.slot(slot_id)?;
        let outcome = slot.run(&mut source, &mut sink);
        let spooled = matches!(&outcome, Ok(s) if s.spooled);
        if spooled {
            self.inner.counters.spools.fetch_add(1, Ordering::Relaxed);
        }
        self.update(id, |s| {
            s.phase = SessionPhase::Closed;
            s.spooled = spooled;
        });
        match outcome {
            Ok(stats) => {
                drop(lease);
                linger_close(&stream);
                Ok(SessionSummary {
                    session_id: id,
                    slot_id,
                    spec_id: spec.id().to_string(),
                    rows: stats.rows,
                    input_bytes: stats.input_bytes,
                    output_bytes: stats.output_bytes,
                    spooled,
                })
            }
            Err(e) => {
                let message = if self.is_aborted() {
                    format!("service aborted: {e}")
                } else {
                    e.to_string()
                };
                drop(lease);
                fail(sink.writer(), &stream, &message);
                Err(e.into())
            }
        }
    }
}
