//! Pipeline specifications, MiniPipe slots and the multi-slot engine.
//!
//! A [`MiniPipeSlot`] owns one [`PipelineSpec`] and the vocabulary state of
//! its last job. Jobs stream frames through a bounded queue: a reader thread
//! pulls from the source, the slot worker transforms each frame and pushes
//! the result to the sink. Stateful specs make two passes over a replayable
//! source, or spool a one-shot source to a temporary column file during the
//! first pass.
//!
//! Slot status moves `Idle -> Running -> Quiescing -> Idle`. Reconfiguration
//! raises the slot's quiesce flag, waits for it to return to `Idle` within a
//! drain deadline, then swaps the spec and drops its tables.

mod engine;
mod exec;
mod slot;
mod spec;

use std::time::Duration;

use thiserror::Error;

use crate::colfmt::FormatError;
use crate::ops::OpError;
use crate::transport::TransportError;

pub use engine::{ConcurrentRun, Engine, EngineConfig, Job, JobThroughput, ThroughputReport};
pub use slot::{MiniPipeSlot, Phase, ReconfigureAck, RunStats, SlotStatus};
pub use spec::{compile_spec, DenseOp, OperatorParams, PipelineSpec, SparseOp, PRESETS};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("unknown pipeline preset {0:?}; valid presets are P-I, P-II, P-III (or a key=value description)")]
    UnknownPreset(String),
    #[error("unknown operator {0:?}")]
    UnknownOperator(String),
    #[error("{0} requires a modulus parameter")]
    MissingModulus(&'static str),
    #[error("misordered chain: {0}")]
    MisorderedChain(String),
    #[error("invalid pipeline description: {0}")]
    InvalidSpec(String),
    #[error("invalid engine configuration: {0}")]
    InvalidConfig(String),
    #[error("input does not fit the pipeline: {0}")]
    SchemaMismatch(String),
    #[error("column {column}: {source}")]
    Operator {
        column: usize,
        #[source]
        source: OpError,
    },
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("stateful pipeline needs a replayable source")]
    NotReplayable,
    #[error("internal consistency error: {0}")]
    Internal(String),
    #[error("no slot {slot} (engine has {slot_count})")]
    NoSuchSlot { slot: usize, slot_count: usize },
    #[error("slot {0} is busy")]
    SlotBusy(usize),
    #[error("slot {0} is quarantined after a failed reconfiguration")]
    Quarantined(usize),
    #[error("slot {slot} did not drain within {deadline:?}; slot quarantined")]
    Timeout { slot: usize, deadline: Duration },
    #[error("job on slot {slot} was interrupted by reconfiguration")]
    Interrupted { slot: usize },
    #[error("scheduling error: {0}")]
    Scheduling(String),
}

impl From<FormatError> for PipelineError {
    fn from(e: FormatError) -> Self {
        PipelineError::Transport(TransportError::Format(e))
    }
}

impl From<std::io::Error> for PipelineError {
    fn from(e: std::io::Error) -> Self {
        PipelineError::Transport(TransportError::Io(e))
    }
}

impl PipelineError {
    /// True for errors in the pipeline description itself.
    pub fn is_spec_error(&self) -> bool {
        matches!(
            self,
            PipelineError::UnknownPreset(_)
                | PipelineError::UnknownOperator(_)
                | PipelineError::MissingModulus(_)
                | PipelineError::MisorderedChain(_)
                | PipelineError::InvalidSpec(_)
        )
    }
}
