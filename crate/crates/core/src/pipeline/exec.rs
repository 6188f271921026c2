//! Frame-level execution: the bounded reader/worker pump and the per-column
//! transformation state used by both stateless and stateful runs.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::sync_channel;
use std::thread;

use crate::colfmt::{ColumnFileHeader, SparseKind};
use crate::ops::{
    hex2int_column, logarithm_in_place, modulus_in_place, neg2zero_in_place, OpError, TokenWidth,
    UnknownPolicy, VocabTable,
};
use crate::transport::{
    rows_per_frame, FrameSink, FrameSource, FrameType, StreamFrame, TransportError,
};

use super::{DenseOp, PipelineError, PipelineSpec, SparseOp};

/// How a [`pump`] ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum PumpEnd {
    Exhausted,
    Quiesced,
}

/// Reads `source` on a helper thread into a queue of `depth` frames and
/// hands each frame to `work` on the calling thread. The reader stops
/// pulling new frames once `quiesce` is raised; frames already queued are
/// still delivered.
pub(crate) fn pump<F>(
    source: &mut dyn FrameSource,
    depth: usize,
    quiesce: &AtomicBool,
    mut work: F,
) -> Result<PumpEnd, PipelineError>
where
    F: FnMut(StreamFrame) -> Result<(), PipelineError>,
{
    thread::scope(|scope| {
        let (tx, rx) = sync_channel::<Result<StreamFrame, TransportError>>(depth.max(1));
        let reader = scope.spawn(move || loop {
            if quiesce.load(Ordering::Acquire) {
                return PumpEnd::Quiesced;
            }
            match source.next_frame() {
                Ok(Some(frame)) => {
                    if tx.send(Ok(frame)).is_err() {
                        return PumpEnd::Exhausted;
                    }
                }
                Ok(None) => return PumpEnd::Exhausted,
                Err(e) => {
                    let _ = tx.send(Err(e));
                    return PumpEnd::Exhausted;
                }
            }
        });
        let result = (|| {
            for msg in &rx {
                work(msg?)?;
            }
            Ok(())
        })();
        drop(rx);
        let end = reader.join().expect("reader thread panicked");
        result.map(|()| end)
    })
}

/// Accumulates output bytes of one column and cuts them into frames of at
/// most `rows_per_frame(width)` elements.
struct Rechunker {
    column: Option<u16>,
    buf: Vec<u8>,
    chunk: usize,
    max_payload: usize,
}

impl Rechunker {
    fn new(max_payload: usize) -> Self {
        Self {
            column: None,
            buf: Vec::new(),
            chunk: 0,
            max_payload,
        }
    }

    fn push(
        &mut self,
        column: u16,
        width: usize,
        bytes: &[u8],
        emit: &mut dyn FnMut(u16, Vec<u8>) -> Result<(), PipelineError>,
    ) -> Result<(), PipelineError> {
        if self.column != Some(column) {
            self.flush(emit)?;
            self.column = Some(column);
            self.chunk = rows_per_frame(width, self.max_payload) * width;
        }
        if self.buf.is_empty() && bytes.len() == self.chunk {
            return emit(column, bytes.to_vec());
        }
        let mut rest = bytes;
        while !rest.is_empty() {
            let take = (self.chunk - self.buf.len()).min(rest.len());
            self.buf.extend_from_slice(&rest[..take]);
            rest = &rest[take..];
            if self.buf.len() == self.chunk {
                let full = std::mem::replace(&mut self.buf, Vec::with_capacity(self.chunk));
                emit(column, full)?;
            }
        }
        Ok(())
    }

    fn flush(
        &mut self,
        emit: &mut dyn FnMut(u16, Vec<u8>) -> Result<(), PipelineError>,
    ) -> Result<(), PipelineError> {
        if let Some(column) = self.column {
            if !self.buf.is_empty() {
                emit(column, std::mem::take(&mut self.buf))?;
            }
        }
        Ok(())
    }
}

/// Numbers output frames on the slot's lane and counts what was sent.
pub(crate) struct Emitter {
    slot_id: u8,
    sequence: u64,
    pub bytes: u64,
    pub frames: u64,
}

impl Emitter {
    fn send(
        &mut self,
        sink: &mut dyn FrameSink,
        column: u16,
        payload: Vec<u8>,
    ) -> Result<(), PipelineError> {
        self.sequence += 1;
        self.bytes += payload.len() as u64;
        self.frames += 1;
        sink.accept(StreamFrame::new(
            FrameType::Data,
            self.slot_id,
            column,
            self.sequence,
            payload,
        ))?;
        Ok(())
    }
}

/// What a sparse frame is processed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Pass {
    /// Stateless: full chain, output emitted.
    Stream,
    /// Stateful pass 1: parse and reduce, feed vocab_gen, no output.
    Build,
    /// Stateful pass 2: full chain through vocab_map, output emitted.
    Map,
}

/// Per-job transformation state.
pub(crate) struct Transformer<'a> {
    spec: &'a PipelineSpec,
    input: ColumnFileHeader,
    output: ColumnFileHeader,
    next_column: usize,
    rows_seen: Vec<u64>,
    rechunk: Rechunker,
    pub out: Emitter,
    pub bytes_in: u64,
    dense_scratch: Vec<f32>,
    sparse_scratch: Vec<u64>,
    index_scratch: Vec<u32>,
    out_scratch: Vec<u8>,
}

impl<'a> Transformer<'a> {
    pub fn new(
        spec: &'a PipelineSpec,
        input: ColumnFileHeader,
        slot_id: u8,
        max_payload: usize,
    ) -> Result<Self, PipelineError> {
        let kind = spec.output_kind(input.sparse_kind)?;
        let output =
            ColumnFileHeader::new(input.dense_count, input.sparse_count, kind, input.row_count);
        Ok(Self {
            spec,
            input,
            output,
            next_column: 0,
            rows_seen: vec![0; input.column_count()],
            rechunk: Rechunker::new(max_payload),
            out: Emitter {
                slot_id,
                sequence: 0,
                bytes: 0,
                frames: 0,
            },
            bytes_in: 0,
            dense_scratch: Vec::new(),
            sparse_scratch: Vec::new(),
            index_scratch: Vec::new(),
            out_scratch: Vec::new(),
        })
    }

    pub fn output_header(&self) -> &ColumnFileHeader {
        &self.output
    }

    /// Rewinds the column bookkeeping for a second pass.
    pub fn restart(&mut self) {
        self.next_column = 0;
        self.rows_seen.iter_mut().for_each(|r| *r = 0);
    }

    /// Validates placement of `frame` and returns `(column, first_row)`.
    fn admit(&mut self, frame: &StreamFrame) -> Result<(usize, u64), PipelineError> {
        let column = frame.column();
        let protocol = |reason: String| {
            PipelineError::Transport(TransportError::Protocol {
                sequence: frame.sequence(),
                reason,
            })
        };
        if frame.frame_type() != FrameType::Data {
            return Err(protocol(format!("unexpected {} frame", frame.frame_type())));
        }
        if column >= self.input.column_count() {
            return Err(protocol(format!("column {column} outside schema")));
        }
        if column < self.next_column {
            return Err(protocol(format!(
                "column {column} arrived after column {}",
                self.next_column
            )));
        }
        let width = self.input.element_width(column);
        if frame.payload.len() % width != 0 {
            return Err(protocol(format!(
                "payload of column {column} splits an element"
            )));
        }
        let first_row = self.rows_seen[column];
        let rows = (frame.payload.len() / width) as u64;
        if first_row + rows > self.input.row_count {
            return Err(protocol(format!(
                "column {column} longer than {} rows",
                self.input.row_count
            )));
        }
        self.next_column = column;
        self.rows_seen[column] += rows;
        self.bytes_in += frame.payload.len() as u64;
        Ok((column, first_row))
    }

    /// Processes one input frame. `tables` holds one table per sparse column
    /// for stateful passes.
    pub fn process(
        &mut self,
        frame: StreamFrame,
        pass: Pass,
        tables: &mut [VocabTable],
        sink: &mut dyn FrameSink,
    ) -> Result<(), PipelineError> {
        let (column, first_row) = self.admit(&frame)?;
        let attribute = |e: OpError| PipelineError::Operator { column, source: e };
        if self.input.is_dense(column) {
            if pass == Pass::Build {
                return Ok(());
            }
            let values = &mut self.dense_scratch;
            values.clear();
            values.extend(
                frame
                    .payload
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))),
            );
            for op in self.spec.dense_chain() {
                match op {
                    DenseOp::Neg2Zero => neg2zero_in_place(values),
                    DenseOp::Logarithm => {
                        logarithm_in_place(values, first_row).map_err(attribute)?
                    }
                }
            }
            self.out_scratch.clear();
            for v in values.iter() {
                self.out_scratch.extend_from_slice(&v.to_le_bytes());
            }
            return self.emit(column, 4, sink);
        }

        let sparse_idx = column - usize::from(self.input.dense_count);
        let chain = self.spec.sparse_chain();
        if chain.is_empty() {
            if pass == Pass::Build {
                return Ok(());
            }
            self.out_scratch.clear();
            self.out_scratch.extend_from_slice(&frame.payload);
            return self.emit(column, self.input.element_width(column), sink);
        }

        let values = &mut self.sparse_scratch;
        values.clear();
        match self.input.sparse_kind {
            SparseKind::Hex { width } if chain[0] == SparseOp::Hex2Int => {
                let width = TokenWidth::new(usize::from(width)).map_err(attribute)?;
                hex2int_column(&frame.payload, width, first_row, values).map_err(attribute)?;
            }
            _ => values.extend(
                frame
                    .payload
                    .chunks_exact(8)
                    .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes"))),
            ),
        }
        let modulus = self.spec.modulus();
        for op in chain {
            match op {
                SparseOp::Hex2Int => {}
                SparseOp::Modulus => modulus_in_place(values, modulus.expect("validated")),
                SparseOp::VocabGen => {
                    if pass == Pass::Build {
                        tables[sparse_idx]
                            .observe(values, first_row)
                            .map_err(attribute)?;
                        return Ok(());
                    }
                }
                SparseOp::VocabMap => {
                    let idx = &mut self.index_scratch;
                    idx.clear();
                    tables[sparse_idx]
                        .map_into(values, first_row, UnknownPolicy::Strict, idx)
                        .map_err(|e| match e {
                            OpError::UnknownValue { row, value } => PipelineError::Internal(format!(
                                "column {column} row {row}: value {value} missing from the pass-1 table"
                            )),
                            other => attribute(other),
                        })?;
                    self.out_scratch.clear();
                    for v in idx.iter() {
                        self.out_scratch.extend_from_slice(&v.to_le_bytes());
                    }
                    return self.emit(column, 4, sink);
                }
            }
        }
        if pass == Pass::Build {
            return Ok(());
        }
        self.out_scratch.clear();
        for v in values.iter() {
            self.out_scratch.extend_from_slice(&v.to_le_bytes());
        }
        self.emit(column, 8, sink)
    }

    fn emit(
        &mut self,
        column: usize,
        width: usize,
        sink: &mut dyn FrameSink,
    ) -> Result<(), PipelineError> {
        let out = &mut self.out;
        self.rechunk
            .push(column as u16, width, &self.out_scratch, &mut |c, p| {
                out.send(sink, c, p)
            })
    }

    /// Flushes the last partial frame and finishes the sink.
    pub fn finish(&mut self, sink: &mut dyn FrameSink) -> Result<(), PipelineError> {
        let out = &mut self.out;
        self.rechunk.flush(&mut |c, p| out.send(sink, c, p))?;
        sink.finish()?;
        Ok(())
    }

    /// Fails unless every column delivered exactly `row_count` rows.
    pub fn check_complete(&self) -> Result<(), PipelineError> {
        for (column, &rows) in self.rows_seen.iter().enumerate() {
            if rows != self.input.row_count {
                return Err(PipelineError::Transport(TransportError::Format(
                    crate::colfmt::FormatError::Truncated {
                        column,
                        expected: self.input.column_len(column),
                        actual: rows * self.input.element_width(column) as u64,
                    },
                )));
            }
        }
        Ok(())
    }
}

/// Fresh per-sparse-column tables for a stateful run.
pub(crate) fn new_tables(spec: &PipelineSpec, header: &ColumnFileHeader) -> Vec<VocabTable> {
    match spec.modulus() {
        Some(m) if spec.is_stateful() => (0..header.sparse_count)
            .map(|_| VocabTable::new(m))
            .collect(),
        _ => Vec::new(),
    }
}
