//! Column streams over files, memory and TCP.
//!
//! Everything moves as [`StreamFrame`]s: a 16-byte header plus a payload
//! holding whole elements of one column, beat-aligned (64 bytes) except for
//! the final frame of a column. Over the network a session looks like:
//!
//! ```text
//! client                         server
//!   CONFIG(pipeline text)   ->
//!                           <-   ACK | ERROR("BUSY ...")
//!   DATA(schema, col 0xffff) ->
//!   DATA(col i) ...          ->
//!   END                      ->
//!                           <-   DATA(schema), DATA(col i) ..., END | ERROR
//! ```
//!
//! Sequence numbers start at 1 and increase by one per frame on each
//! (slot, direction) lane.

mod arbiter;
mod frame;
mod measure;
mod sink;
mod source;

use thiserror::Error;

use crate::colfmt::FormatError;

pub use arbiter::{arbitrate, Arbiter};
pub use frame::{
    read_frame, rows_per_frame, write_frame, FrameHeader, FrameType, FrameWriter, StreamFrame,
    BEAT_BYTES, FRAME_HEADER_LEN, MAX_PAYLOAD, SCHEMA_COLUMN,
};
pub use measure::{
    mean_std, measure_source_throughput, measure_source_throughput_trials, ThroughputStats,
    MIN_TRIALS,
};
pub use sink::{BatchSink, FileSink, FrameSink, NetworkSink, NullSink};
pub use source::{
    open_source, publish, FileSource, FrameSource, Locator, MemorySource, NetworkSource,
    SyntheticSource,
};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("protocol error at sequence {sequence}: {reason}")]
    Protocol { sequence: u64, reason: String },
    #[error("sequence gap on slot {slot}: expected {expected}, got {actual}")]
    SequenceGap {
        slot: u8,
        expected: u64,
        actual: u64,
    },
    #[error("source is not replayable")]
    NotReplayable,
    #[error("cannot reach {endpoint}: {source}")]
    Unreachable {
        endpoint: String,
        #[source]
        source: std::io::Error,
    },
    #[error("remote error: {0}")]
    Remote(String),
    #[error("aborted: {0}")]
    Aborted(String),
}
