use std::fmt;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use tempfile::NamedTempFile;
use tracing::debug;

use crate::colfmt::{ColumnFileHeader, ColumnWriter};
use crate::ops::VocabTable;
use crate::transport::{FileSource, FrameSink, FrameSource, NullSink};

use super::exec::{new_tables, pump, Pass, PumpEnd, Transformer};
use super::{PipelineError, PipelineSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotStatus {
    Idle,
    Running,
    Quiescing,
}

impl fmt::Display for SlotStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SlotStatus::Idle => "idle",
            SlotStatus::Running => "running",
            SlotStatus::Quiescing => "quiescing",
        })
    }
}

/// Which pass a running job is in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Streaming,
    Pass1,
    Pass2,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReconfigureAck {
    pub slot: usize,
    pub spec_id: String,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunStats {
    pub rows: u64,
    /// Input payload bytes of one pass.
    pub input_bytes: u64,
    pub output_bytes: u64,
    pub output_frames: u64,
    pub passes: u32,
    pub spooled: bool,
    pub elapsed: Duration,
}

impl RunStats {
    pub fn bytes_per_sec(&self) -> f64 {
        rate(self.input_bytes, self.elapsed)
    }

    pub fn rows_per_sec(&self) -> f64 {
        rate(self.rows, self.elapsed)
    }
}

pub(crate) fn rate(amount: u64, elapsed: Duration) -> f64 {
    let secs = elapsed.as_secs_f64();
    if amount == 0 || secs == 0.0 {
        0.0
    } else {
        amount as f64 / secs
    }
}

#[derive(Debug, Clone)]
pub(crate) struct SlotConfig {
    pub queue_depth: usize,
    pub max_payload: usize,
    pub spool_dir: Option<PathBuf>,
}

#[derive(Debug)]
struct SlotState {
    status: SlotStatus,
    spec: PipelineSpec,
    tables: Vec<VocabTable>,
    quarantined: bool,
    phase: Option<Phase>,
}

impl SlotState {
    fn transition(&mut self, to: SlotStatus) {
        let ok = matches!(
            (self.status, to),
            (SlotStatus::Idle, SlotStatus::Running)
                | (SlotStatus::Running, SlotStatus::Quiescing)
                | (SlotStatus::Quiescing, SlotStatus::Idle)
        );
        assert!(ok, "illegal slot transition {} -> {to}", self.status);
        self.status = to;
    }
}

#[derive(Debug)]
struct Shared {
    id: usize,
    config: SlotConfig,
    state: Mutex<SlotState>,
    idle: Condvar,
    quiesce: AtomicBool,
}

/// One independently configurable pipeline unit. Cloning yields another
/// handle to the same slot.
#[derive(Debug, Clone)]
pub struct MiniPipeSlot {
    shared: Arc<Shared>,
}

/// Returns the slot to idle when a job ends, however it ends.
struct Activation<'a> {
    shared: &'a Shared,
}

impl Drop for Activation<'_> {
    fn drop(&mut self) {
        let mut st = lock(&self.shared.state);
        st.transition(SlotStatus::Quiescing);
        st.phase = None;
        st.transition(SlotStatus::Idle);
        self.shared.idle.notify_all();
    }
}

fn lock(m: &Mutex<SlotState>) -> MutexGuard<'_, SlotState> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl MiniPipeSlot {
    pub(crate) fn new(id: usize, spec: PipelineSpec, config: SlotConfig) -> Self {
        Self {
            shared: Arc::new(Shared {
                id,
                config,
                state: Mutex::new(SlotState {
                    status: SlotStatus::Idle,
                    spec,
                    tables: Vec::new(),
                    quarantined: false,
                    phase: None,
                }),
                idle: Condvar::new(),
                quiesce: AtomicBool::new(false),
            }),
        }
    }

    /// A stand-alone slot with default queue settings.
    pub fn standalone(id: usize, spec: PipelineSpec) -> Self {
        Self::new(
            id,
            spec,
            SlotConfig {
                queue_depth: 8,
                max_payload: crate::transport::MAX_PAYLOAD,
                spool_dir: None,
            },
        )
    }

    pub fn id(&self) -> usize {
        self.shared.id
    }

    pub fn spec(&self) -> PipelineSpec {
        lock(&self.shared.state).spec.clone()
    }

    pub fn status(&self) -> SlotStatus {
        lock(&self.shared.state).status
    }

    pub fn phase(&self) -> Option<Phase> {
        lock(&self.shared.state).phase
    }

    pub fn is_quarantined(&self) -> bool {
        lock(&self.shared.state).quarantined
    }

    /// Vocabulary tables built by the last stateful job, one per sparse
    /// column; empty after reconfiguration or for stateless specs.
    pub fn tables(&self) -> Vec<VocabTable> {
        lock(&self.shared.state).tables.clone()
    }

    /// Drains the slot, discards its state and installs `spec`.
    ///
    /// An idle slot swaps immediately. A running job stops pulling input,
    /// finishes the frames already queued and ends with
    /// [`PipelineError::Interrupted`]. If the slot is not idle by `deadline`
    /// it is quarantined and keeps its old spec. Reconfiguring a quarantined
    /// slot that has since gone idle clears the quarantine.
    pub fn reconfigure(
        &self,
        spec: PipelineSpec,
        deadline: Duration,
    ) -> Result<ReconfigureAck, PipelineError> {
        let start = Instant::now();
        let mut st = lock(&self.shared.state);
        if st.status != SlotStatus::Idle {
            self.shared.quiesce.store(true, Ordering::Release);
            let (guard, wait) = self
                .shared
                .idle
                .wait_timeout_while(st, deadline, |s| s.status != SlotStatus::Idle)
                .unwrap_or_else(|p| p.into_inner());
            st = guard;
            if wait.timed_out() {
                st.quarantined = true;
                return Err(PipelineError::Timeout {
                    slot: self.shared.id,
                    deadline,
                });
            }
        }
        debug!(
            slot = self.shared.id,
            from = st.spec.id(),
            to = spec.id(),
            "reconfigure"
        );
        let spec_id = spec.id().to_string();
        st.spec = spec;
        st.tables = Vec::new();
        st.quarantined = false;
        self.shared.quiesce.store(false, Ordering::Release);
        Ok(ReconfigureAck {
            slot: self.shared.id,
            spec_id,
            elapsed: start.elapsed(),
        })
    }

    fn activate(&self) -> Result<(Activation<'_>, PipelineSpec), PipelineError> {
        let mut st = lock(&self.shared.state);
        if st.quarantined {
            return Err(PipelineError::Quarantined(self.shared.id));
        }
        if st.status != SlotStatus::Idle {
            return Err(PipelineError::SlotBusy(self.shared.id));
        }
        self.shared.quiesce.store(false, Ordering::Release);
        st.transition(SlotStatus::Running);
        Ok((
            Activation {
                shared: &self.shared,
            },
            st.spec.clone(),
        ))
    }

    fn set_phase(&self, phase: Phase) {
        lock(&self.shared.state).phase = Some(phase);
    }

    fn interrupted(&self) -> PipelineError {
        PipelineError::Interrupted {
            slot: self.shared.id,
        }
    }

    /// Runs the installed spec: one streaming pass for stateless specs, two
    /// passes for stateful ones, spooling one-shot sources to a temporary
    /// file in the configured spool directory.
    pub fn run(
        &self,
        source: &mut dyn FrameSource,
        sink: &mut dyn FrameSink,
    ) -> Result<RunStats, PipelineError> {
        let (_active, spec) = self.activate()?;
        if !spec.is_stateful() {
            self.exec_stateless(&spec, source, sink)
        } else if source.is_replayable() {
            self.exec_stateful(&spec, source, None, sink)
        } else {
            let dir = self
                .shared
                .config
                .spool_dir
                .clone()
                .unwrap_or_else(std::env::temp_dir);
            self.exec_stateful(&spec, source, Some(&dir), sink)
        }
    }

    /// Single streaming pass; fails on a stateful spec.
    pub fn run_stateless(
        &self,
        source: &mut dyn FrameSource,
        sink: &mut dyn FrameSink,
    ) -> Result<RunStats, PipelineError> {
        let (_active, spec) = self.activate()?;
        if spec.is_stateful() {
            return Err(PipelineError::SchemaMismatch(format!(
                "{} is stateful; use run_stateful",
                spec.id()
            )));
        }
        self.exec_stateless(&spec, source, sink)
    }

    /// Two passes over a replayable source.
    pub fn run_stateful(
        &self,
        source: &mut dyn FrameSource,
        sink: &mut dyn FrameSink,
    ) -> Result<RunStats, PipelineError> {
        let (_active, spec) = self.activate()?;
        if !spec.is_stateful() {
            return Err(PipelineError::SchemaMismatch(format!(
                "{} is stateless; use run_stateless",
                spec.id()
            )));
        }
        if !source.is_replayable() {
            return Err(PipelineError::NotReplayable);
        }
        self.exec_stateful(&spec, source, None, sink)
    }

    fn exec_stateless(
        &self,
        spec: &PipelineSpec,
        source: &mut dyn FrameSource,
        sink: &mut dyn FrameSink,
    ) -> Result<RunStats, PipelineError> {
        let start = Instant::now();
        self.set_phase(Phase::Streaming);
        let header = *source.header();
        let cfg = &self.shared.config;
        let mut t = Transformer::new(spec, header, self.shared.id as u8, cfg.max_payload)?;
        sink.begin(t.output_header())?;
        let end = pump(source, cfg.queue_depth, &self.shared.quiesce, |frame| {
            t.process(frame, Pass::Stream, &mut [], sink)
        })?;
        if end == PumpEnd::Quiesced {
            return Err(self.interrupted());
        }
        t.check_complete()?;
        t.finish(sink)?;
        lock(&self.shared.state).tables = Vec::new();
        Ok(stats(&header, &t, 1, false, start))
    }

    fn exec_stateful(
        &self,
        spec: &PipelineSpec,
        source: &mut dyn FrameSource,
        spool_dir: Option<&Path>,
        sink: &mut dyn FrameSink,
    ) -> Result<RunStats, PipelineError> {
        let start = Instant::now();
        let header = *source.header();
        let cfg = &self.shared.config;
        let mut t = Transformer::new(spec, header, self.shared.id as u8, cfg.max_payload)?;
        let mut tables = new_tables(spec, &header);

        self.set_phase(Phase::Pass1);
        let mut spool = match spool_dir {
            Some(dir) => Some(Spool::create(dir, header)?),
            None => None,
        };
        let mut discard = NullSink::new();
        let end = pump(source, cfg.queue_depth, &self.shared.quiesce, |frame| {
            if let Some(spool) = spool.as_mut() {
                spool.writer.write_payload(frame.column(), &frame.payload)?;
            }
            t.process(frame, Pass::Build, &mut tables, &mut discard)
        })?;
        if end == PumpEnd::Quiesced {
            return Err(self.interrupted());
        }
        t.check_complete()?;

        self.set_phase(Phase::Pass2);
        let mut replay;
        let second: &mut dyn FrameSource = match spool.take() {
            Some(spool) => {
                let file = spool.finish()?;
                replay = (
                    FileSource::open(file.path())?.with_max_payload(cfg.max_payload),
                    file,
                );
                &mut replay.0
            }
            None => {
                source.rewind()?;
                source
            }
        };
        t.restart();
        t.bytes_in = 0;
        sink.begin(t.output_header())?;
        let end = pump(second, cfg.queue_depth, &self.shared.quiesce, |frame| {
            t.process(frame, Pass::Map, &mut tables, sink)
        })?;
        if end == PumpEnd::Quiesced {
            return Err(self.interrupted());
        }
        t.check_complete()?;
        t.finish(sink)?;
        lock(&self.shared.state).tables = tables;
        Ok(stats(&header, &t, 2, spool_dir.is_some(), start))
    }
}

struct Spool {
    file: NamedTempFile,
    writer: ColumnWriter<BufWriter<std::fs::File>>,
}

impl Spool {
    fn create(dir: &Path, header: ColumnFileHeader) -> Result<Self, PipelineError> {
        let file = tempfile::Builder::new()
            .prefix("minipipe-spool-")
            .suffix(".col")
            .tempfile_in(dir)?;
        let writer = ColumnWriter::new(BufWriter::with_capacity(1 << 16, file.reopen()?), header)?;
        debug!(path = %file.path().display(), "spooling one-shot source");
        Ok(Self { file, writer })
    }

    /// Completes the spool file; it is deleted when the returned handle drops.
    fn finish(self) -> Result<NamedTempFile, PipelineError> {
        let (mut out, _) = self.writer.finish()?;
        std::io::Write::flush(&mut out)?;
        Ok(self.file)
    }
}

fn stats(
    header: &ColumnFileHeader,
    t: &Transformer<'_>,
    passes: u32,
    spooled: bool,
    start: Instant,
) -> RunStats {
    RunStats {
        rows: header.row_count,
        input_bytes: t.bytes_in,
        output_bytes: t.out.bytes,
        output_frames: t.out.frames,
        passes,
        spooled,
        elapsed: start.elapsed(),
    }
}
