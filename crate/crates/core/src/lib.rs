//! Streaming columnar preprocessing for recommender-system features.
//!
//! The crate is organised around a few layers:
//!
//! * [`colfmt`]: column batches, the `MPCOL` binary container and a seeded
//!   synthetic dataset generator.
//! * [`ops`]: the dense and sparse feature operators, including the
//!   stateful vocabulary pair.
//! * [`pipeline`]: pipeline specifications, MiniPipe slots and the engine
//!   that runs them concurrently with runtime reconfiguration.
//! * [`transport`]: frame sources/sinks over files, memory and TCP, the
//!   64-byte-grained wire protocol and the per-slot arbiter.
//! * [`service`]: a TCP preprocessing server and a matching client.
//! * [`oracle`]: a naive single-threaded reference used for differential
//!   testing.
//! * [`bench`]: scaling and operator benchmarks with JSON-lines reports.

pub mod bench;
pub mod colfmt;
pub mod ops;
pub mod oracle;
pub mod pipeline;
pub mod service;
pub mod transport;

pub use colfmt::{ColumnBatch, ColumnFileHeader, DatasetSpec, SparseKind};
pub use pipeline::{compile_spec, Engine, EngineConfig, MiniPipeSlot, PipelineSpec};
