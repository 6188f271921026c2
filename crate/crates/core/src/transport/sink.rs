use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{FrameType, FrameWriter, StreamFrame, TransportError, SCHEMA_COLUMN};
use crate::colfmt::{read_column_file, ColumnBatch, ColumnFileHeader, ColumnWriter};

/// Consumer of a column stream.
pub trait FrameSink {
    fn begin(&mut self, header: &ColumnFileHeader) -> Result<(), TransportError>;
    fn accept(&mut self, frame: StreamFrame) -> Result<(), TransportError>;
    fn finish(&mut self) -> Result<(), TransportError>;
}

impl<S: FrameSink + ?Sized> FrameSink for &mut S {
    fn begin(&mut self, header: &ColumnFileHeader) -> Result<(), TransportError> {
        (**self).begin(header)
    }
    fn accept(&mut self, frame: StreamFrame) -> Result<(), TransportError> {
        (**self).accept(frame)
    }
    fn finish(&mut self) -> Result<(), TransportError> {
        (**self).finish()
    }
}

impl<S: FrameSink + ?Sized> FrameSink for Box<S> {
    fn begin(&mut self, header: &ColumnFileHeader) -> Result<(), TransportError> {
        (**self).begin(header)
    }
    fn accept(&mut self, frame: StreamFrame) -> Result<(), TransportError> {
        (**self).accept(frame)
    }
    fn finish(&mut self) -> Result<(), TransportError> {
        (**self).finish()
    }
}

/// Collects a stream back into a [`ColumnBatch`].
#[derive(Debug, Default)]
pub struct BatchSink {
    image: Vec<u8>,
    writer: Option<ColumnWriter<Vec<u8>>>,
    finished: bool,
}

impl BatchSink {
    pub fn new() -> Self {
        Self::default()
    }

    /// The collected column file image.
    pub fn into_bytes(self) -> Result<Vec<u8>, TransportError> {
        if !self.finished {
            return Err(TransportError::Protocol {
                sequence: 0,
                reason: "stream did not finish".into(),
            });
        }
        Ok(self.image)
    }

    pub fn into_batch(self) -> Result<ColumnBatch, TransportError> {
        let bytes = self.into_bytes()?;
        Ok(read_column_file(&bytes[..])?)
    }
}

impl FrameSink for BatchSink {
    fn begin(&mut self, header: &ColumnFileHeader) -> Result<(), TransportError> {
        let buf = Vec::with_capacity(header.file_len() as usize);
        self.writer = Some(ColumnWriter::new(buf, *header)?);
        self.finished = false;
        Ok(())
    }

    fn accept(&mut self, frame: StreamFrame) -> Result<(), TransportError> {
        let writer = self.writer.as_mut().ok_or_else(not_begun)?;
        writer.write_payload(frame.column(), &frame.payload)?;
        Ok(())
    }

    fn finish(&mut self) -> Result<(), TransportError> {
        let writer = self.writer.take().ok_or_else(not_begun)?;
        let (image, _) = writer.finish()?;
        self.image = image;
        self.finished = true;
        Ok(())
    }
}

fn not_begun() -> TransportError {
    TransportError::Protocol {
        sequence: 0,
        reason: "sink used before begin".into(),
    }
}

/// Writes a stream as a column file.
pub struct FileSink<W: Write> {
    target: Option<W>,
    writer: Option<ColumnWriter<W>>,
    written: u64,
}

impl FileSink<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>) -> Result<Self, TransportError> {
        Ok(Self::new(BufWriter::with_capacity(
            1 << 16,
            File::create(path)?,
        )))
    }
}

impl<W: Write> FileSink<W> {
    pub fn new(target: W) -> Self {
        Self {
            target: Some(target),
            writer: None,
            written: 0,
        }
    }

    pub fn bytes_written(&self) -> u64 {
        self.written
    }

    pub fn into_inner(self) -> Option<W> {
        self.target
    }
}

impl<W: Write> FrameSink for FileSink<W> {
    fn begin(&mut self, header: &ColumnFileHeader) -> Result<(), TransportError> {
        let target = self.target.take().ok_or_else(|| TransportError::Protocol {
            sequence: 0,
            reason: "file sink already used".into(),
        })?;
        self.writer = Some(ColumnWriter::new(target, *header)?);
        Ok(())
    }

    fn accept(&mut self, frame: StreamFrame) -> Result<(), TransportError> {
        let writer = self.writer.as_mut().ok_or_else(not_begun)?;
        writer.write_payload(frame.column(), &frame.payload)?;
        Ok(())
    }

    fn finish(&mut self) -> Result<(), TransportError> {
        let writer = self.writer.take().ok_or_else(not_begun)?;
        let (target, written) = writer.finish()?;
        self.target = Some(target);
        self.written = written;
        Ok(())
    }
}

/// Discards payloads, counting what passed through.
#[derive(Debug, Default, Clone)]
pub struct NullSink {
    pub header: Option<ColumnFileHeader>,
    pub frames: u64,
    pub bytes: u64,
    pub finished: bool,
}

impl NullSink {
    pub fn new() -> Self {
        Self::default()
    }
}

impl FrameSink for NullSink {
    fn begin(&mut self, header: &ColumnFileHeader) -> Result<(), TransportError> {
        self.header = Some(*header);
        Ok(())
    }

    fn accept(&mut self, frame: StreamFrame) -> Result<(), TransportError> {
        self.frames += 1;
        self.bytes += frame.payload.len() as u64;
        Ok(())
    }

    fn finish(&mut self) -> Result<(), TransportError> {
        self.finished = true;
        Ok(())
    }
}

/// Streams output to a peer: schema DATA frame, DATA frames, END.
pub struct NetworkSink<W: Write> {
    writer: FrameWriter<W>,
}

impl<W: Write> NetworkSink<W> {
    pub fn new(writer: FrameWriter<W>) -> Self {
        Self { writer }
    }

    pub fn writer(&mut self) -> &mut FrameWriter<W> {
        &mut self.writer
    }

    pub fn into_writer(self) -> FrameWriter<W> {
        self.writer
    }
}

impl<W: Write> FrameSink for NetworkSink<W> {
    fn begin(&mut self, header: &ColumnFileHeader) -> Result<(), TransportError> {
        self.writer
            .send(FrameType::Data, SCHEMA_COLUMN, &header.to_bytes())?;
        Ok(())
    }

    fn accept(&mut self, frame: StreamFrame) -> Result<(), TransportError> {
        self.writer
            .send(FrameType::Data, frame.header.column_index, &frame.payload)?;
        Ok(())
    }

    fn finish(&mut self) -> Result<(), TransportError> {
        self.writer.send(FrameType::End, 0, &[])?;
        self.writer.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::colfmt::{generate_synthetic, DatasetSpec};
    use crate::transport::{FrameSource, MemorySource};

    #[test]
    fn file_sink_writes_identical_image() {
        let batch = generate_synthetic(&DatasetSpec {
            rows: 10_000,
            dense_features: 2,
            sparse_features: 2,
            ..DatasetSpec::default()
        })
        .unwrap();
        let mut src = MemorySource::from_batch(&batch);
        let mut sink = FileSink::new(Vec::new());
        sink.begin(src.header()).unwrap();
        while let Some(f) = src.next_frame().unwrap() {
            sink.accept(f).unwrap();
        }
        sink.finish().unwrap();
        assert_eq!(sink.bytes_written(), batch.header().file_len());
        assert_eq!(sink.into_inner().unwrap(), batch.to_file_bytes());
    }

    #[test]
    fn batch_sink_rejects_incomplete_streams() {
        let batch = generate_synthetic(&DatasetSpec {
            rows: 100,
            dense_features: 1,
            sparse_features: 1,
            ..DatasetSpec::default()
        })
        .unwrap();
        let mut src = MemorySource::from_batch(&batch);
        let mut sink = BatchSink::new();
        sink.begin(src.header()).unwrap();
        sink.accept(src.next_frame().unwrap().unwrap()).unwrap();
        assert!(sink.finish().is_err());
    }
}
