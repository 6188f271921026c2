use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufReader, Seek, SeekFrom, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::{
    read_frame, rows_per_frame, Arbiter, FrameType, FrameWriter, StreamFrame, TransportError,
    MAX_PAYLOAD, SCHEMA_COLUMN,
};
use crate::colfmt::{
    ColumnBatch, ColumnFileHeader, ColumnReader, DatasetSpec, DenseGenerator, FormatError,
    SparseGenerator, SparseKind, HEADER_LEN,
};

/// A stream of DATA frames in column order, preceded by a schema.
pub trait FrameSource: Send {
    fn header(&self) -> &ColumnFileHeader;

    /// Next frame, or `None` after the last column.
    fn next_frame(&mut self) -> Result<Option<StreamFrame>, TransportError>;

    fn is_replayable(&self) -> bool;

    /// Restarts from the first column. Fails with
    /// [`TransportError::NotReplayable`] on one-shot sources.
    fn rewind(&mut self) -> Result<(), TransportError>;
}

impl<S: FrameSource + ?Sized> FrameSource for Box<S> {
    fn header(&self) -> &ColumnFileHeader {
        (**self).header()
    }
    fn next_frame(&mut self) -> Result<Option<StreamFrame>, TransportError> {
        (**self).next_frame()
    }
    fn is_replayable(&self) -> bool {
        (**self).is_replayable()
    }
    fn rewind(&mut self) -> Result<(), TransportError> {
        (**self).rewind()
    }
}

/// Where a column stream comes from.
#[derive(Debug, Clone)]
pub enum Locator {
    File(PathBuf),
    /// A column file image held in memory.
    Memory(Arc<[u8]>),
    /// A peer that publishes schema, DATA frames and END on connect.
    Network(String),
}

pub fn open_source(locator: &Locator) -> Result<Box<dyn FrameSource>, TransportError> {
    Ok(match locator {
        Locator::File(path) => Box::new(FileSource::open(path)?),
        Locator::Memory(bytes) => Box::new(MemorySource::new(bytes.clone())?),
        Locator::Network(endpoint) => Box::new(NetworkSource::connect(endpoint)?),
    })
}

/// Tracks the per-column chunking shared by the replayable sources.
#[derive(Debug, Clone, Copy)]
struct Cursor {
    column: usize,
    offset: u64,
    sequence: u64,
}

impl Cursor {
    fn start() -> Self {
        Self {
            column: 0,
            offset: 0,
            sequence: 0,
        }
    }

    /// Advances past finished columns; returns `(column, offset, len)` of the
    /// next chunk.
    fn next_chunk(
        &mut self,
        header: &ColumnFileHeader,
        max_payload: usize,
    ) -> Option<(usize, u64, usize)> {
        while self.column < header.column_count() && self.offset >= header.column_len(self.column) {
            self.column += 1;
            self.offset = 0;
        }
        if self.column >= header.column_count() {
            return None;
        }
        let width = header.element_width(self.column);
        let max = (rows_per_frame(width, max_payload) * width) as u64;
        let len = (header.column_len(self.column) - self.offset).min(max) as usize;
        let chunk = (self.column, self.offset, len);
        self.offset += len as u64;
        self.sequence += 1;
        Some(chunk)
    }
}

/// Finds the column in which a file image of `available` bytes ends.
fn truncation(header: &ColumnFileHeader, available: u64) -> FormatError {
    for column in 0..header.column_count() {
        let start = header.column_offset(column);
        let len = header.column_len(column);
        if available < start + len {
            return FormatError::Truncated {
                column,
                expected: len,
                actual: available.saturating_sub(start),
            };
        }
    }
    FormatError::InvalidHeader("file shorter than header".into())
}

/// Replayable source over a column file on disk.
pub struct FileSource {
    path: PathBuf,
    reader: ColumnReader<BufReader<File>>,
    max_payload: usize,
    sequence: u64,
}

impl FileSource {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, TransportError> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path)?;
        let len = file.metadata()?.len();
        let reader = ColumnReader::open(BufReader::with_capacity(1 << 16, file))?;
        if len < reader.header().file_len() {
            return Err(truncation(reader.header(), len).into());
        }
        Ok(Self {
            path,
            reader,
            max_payload: MAX_PAYLOAD,
            sequence: 0,
        })
    }

    pub fn with_max_payload(mut self, max_payload: usize) -> Self {
        self.max_payload = max_payload;
        self
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl FrameSource for FileSource {
    fn header(&self) -> &ColumnFileHeader {
        self.reader.header()
    }

    fn next_frame(&mut self) -> Result<Option<StreamFrame>, TransportError> {
        let width = self
            .reader
            .header()
            .element_width(self.reader.current_column());
        let rows = rows_per_frame(width, self.max_payload);
        match self.reader.read_chunk(rows)? {
            Some((column, payload)) => {
                self.sequence += 1;
                Ok(Some(StreamFrame::data(
                    column as u16,
                    self.sequence,
                    payload,
                )))
            }
            None => Ok(None),
        }
    }

    fn is_replayable(&self) -> bool {
        true
    }

    fn rewind(&mut self) -> Result<(), TransportError> {
        let mut file = File::open(&self.path)?;
        file.seek(SeekFrom::Start(0))?;
        self.reader = ColumnReader::open(BufReader::with_capacity(1 << 16, file))?;
        self.sequence = 0;
        Ok(())
    }
}

/// Replayable source over a column file image in memory.
#[derive(Clone)]
pub struct MemorySource {
    bytes: Arc<[u8]>,
    header: ColumnFileHeader,
    cursor: Cursor,
    max_payload: usize,
}

impl MemorySource {
    pub fn new(bytes: Arc<[u8]>) -> Result<Self, TransportError> {
        if bytes.len() < HEADER_LEN {
            // Let the reader produce the precise error.
            ColumnReader::open(&bytes[..])?;
        }
        let header = ColumnFileHeader::from_bytes(&bytes[..HEADER_LEN])?;
        if (bytes.len() as u64) < header.file_len() {
            return Err(truncation(&header, bytes.len() as u64).into());
        }
        Ok(Self {
            bytes,
            header,
            cursor: Cursor::start(),
            max_payload: MAX_PAYLOAD,
        })
    }

    pub fn from_batch(batch: &ColumnBatch) -> Self {
        Self::new(batch.to_file_bytes().into()).expect("serialised batch is well formed")
    }

    pub fn with_max_payload(mut self, max_payload: usize) -> Self {
        self.max_payload = max_payload;
        self
    }

    pub fn bytes(&self) -> &Arc<[u8]> {
        &self.bytes
    }
}

impl FrameSource for MemorySource {
    fn header(&self) -> &ColumnFileHeader {
        &self.header
    }

    fn next_frame(&mut self) -> Result<Option<StreamFrame>, TransportError> {
        Ok(self
            .cursor
            .next_chunk(&self.header, self.max_payload)
            .map(|(column, offset, len)| {
                let start = (self.header.column_offset(column) + offset) as usize;
                StreamFrame::data(
                    column as u16,
                    self.cursor.sequence,
                    self.bytes[start..start + len].to_vec(),
                )
            }))
    }

    fn is_replayable(&self) -> bool {
        true
    }

    fn rewind(&mut self) -> Result<(), TransportError> {
        self.cursor = Cursor::start();
        Ok(())
    }
}

/// Replayable source that generates a synthetic dataset on the fly, so the
/// stream never exists in memory as a whole.
pub struct SyntheticSource {
    spec: DatasetSpec,
    header: ColumnFileHeader,
    cursor: Cursor,
    max_payload: usize,
    dense: Option<(usize, DenseGenerator)>,
    sparse: Option<(usize, SparseGenerator)>,
}

impl SyntheticSource {
    pub fn new(spec: DatasetSpec) -> Result<Self, TransportError> {
        spec.validate()?;
        let header = ColumnFileHeader::new(
            spec.dense_features as u16,
            spec.sparse_features as u16,
            SparseKind::Hex {
                width: spec.token_width,
            },
            spec.rows as u64,
        );
        Ok(Self {
            spec,
            header,
            cursor: Cursor::start(),
            max_payload: MAX_PAYLOAD,
            dense: None,
            sparse: None,
        })
    }
}

impl FrameSource for SyntheticSource {
    fn header(&self) -> &ColumnFileHeader {
        &self.header
    }

    fn next_frame(&mut self) -> Result<Option<StreamFrame>, TransportError> {
        let Some((column, _, len)) = self.cursor.next_chunk(&self.header, self.max_payload) else {
            return Ok(None);
        };
        let dense_count = self.spec.dense_features;
        let payload = if column < dense_count {
            if self.dense.as_ref().map(|(c, _)| *c) != Some(column) {
                self.dense = Some((column, DenseGenerator::new(&self.spec, column)));
            }
            let (_, generator) = self.dense.as_mut().expect("set above");
            let mut values = vec![0f32; len / 4];
            generator.fill(&mut values);
            let mut out = Vec::with_capacity(len);
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out
        } else {
            let idx = column - dense_count;
            if self.sparse.as_ref().map(|(c, _)| *c) != Some(idx) {
                self.sparse = Some((idx, SparseGenerator::new(&self.spec, idx)));
            }
            let (_, generator) = self.sparse.as_mut().expect("set above");
            let mut out = Vec::with_capacity(len);
            generator.fill_tokens(len / usize::from(self.spec.token_width), &mut out);
            out
        };
        Ok(Some(StreamFrame::data(
            column as u16,
            self.cursor.sequence,
            payload,
        )))
    }

    fn is_replayable(&self) -> bool {
        true
    }

    fn rewind(&mut self) -> Result<(), TransportError> {
        self.cursor = Cursor::start();
        self.dense = None;
        self.sparse = None;
        Ok(())
    }
}

/// One-shot source reading the wire protocol from a TCP peer: a schema DATA
/// frame, DATA frames in column order, then END.
pub struct NetworkSource {
    reader: BufReader<TcpStream>,
    header: ColumnFileHeader,
    arbiter: Arbiter,
    ready: VecDeque<StreamFrame>,
    done: bool,
    max_payload: usize,
    last_sequence: u64,
}

impl NetworkSource {
    pub fn connect(endpoint: &str) -> Result<Self, TransportError> {
        let addrs: Vec<SocketAddr> = endpoint
            .to_socket_addrs()
            .map_err(|source| TransportError::Unreachable {
                endpoint: endpoint.to_string(),
                source,
            })?
            .collect();
        let stream =
            TcpStream::connect(&addrs[..]).map_err(|source| TransportError::Unreachable {
                endpoint: endpoint.to_string(),
                source,
            })?;
        Self::from_stream(stream, Arbiter::new(8))
    }

    /// Continues reading from `stream`; `arbiter` carries any sequence state
    /// from frames already consumed on this connection.
    pub fn from_stream(stream: TcpStream, arbiter: Arbiter) -> Result<Self, TransportError> {
        let mut source = Self {
            reader: BufReader::with_capacity(1 << 16, stream),
            header: ColumnFileHeader::new(0, 0, SparseKind::Value, 0),
            arbiter,
            ready: VecDeque::new(),
            done: false,
            max_payload: MAX_PAYLOAD,
            last_sequence: 0,
        };
        let schema = source.next_raw()?.ok_or_else(|| TransportError::Protocol {
            sequence: source.last_sequence,
            reason: "stream ended before the schema frame".into(),
        })?;
        if schema.header.column_index != SCHEMA_COLUMN {
            return Err(TransportError::Protocol {
                sequence: schema.sequence(),
                reason: format!(
                    "expected schema frame, got column {}",
                    schema.header.column_index
                ),
            });
        }
        source.header = ColumnFileHeader::from_bytes(&schema.payload)?;
        Ok(source)
    }

    pub fn last_sequence(&self) -> u64 {
        self.last_sequence
    }

    /// Next in-order DATA frame (schema included), `None` after END.
    fn next_raw(&mut self) -> Result<Option<StreamFrame>, TransportError> {
        loop {
            if let Some(f) = self.ready.pop_front() {
                self.last_sequence = f.sequence();
                match f.frame_type() {
                    FrameType::Data => return Ok(Some(f)),
                    FrameType::End => {
                        self.done = true;
                        self.ready.clear();
                        return Ok(None);
                    }
                    FrameType::Error => {
                        return Err(TransportError::Remote(
                            String::from_utf8_lossy(&f.payload).into_owned(),
                        ))
                    }
                    other => {
                        return Err(TransportError::Protocol {
                            sequence: f.sequence(),
                            reason: format!("unexpected {other} frame in data stream"),
                        })
                    }
                }
            }
            if self.done {
                return Ok(None);
            }
            match read_frame(&mut self.reader, self.max_payload)? {
                Some(f) => self.ready.extend(self.arbiter.push(f)?),
                None => {
                    return Err(TransportError::Protocol {
                        sequence: self.last_sequence,
                        reason: "connection closed before END".into(),
                    })
                }
            }
        }
    }
}

impl FrameSource for NetworkSource {
    fn header(&self) -> &ColumnFileHeader {
        &self.header
    }

    fn next_frame(&mut self) -> Result<Option<StreamFrame>, TransportError> {
        let Some(frame) = self.next_raw()? else {
            return Ok(None);
        };
        let column = frame.column();
        if column >= self.header.column_count() {
            return Err(TransportError::Protocol {
                sequence: frame.sequence(),
                reason: format!("column {column} outside schema"),
            });
        }
        if frame.payload.len() % self.header.element_width(column) != 0 {
            return Err(TransportError::Protocol {
                sequence: frame.sequence(),
                reason: format!("payload of column {column} splits an element"),
            });
        }
        Ok(Some(frame))
    }

    fn is_replayable(&self) -> bool {
        false
    }

    fn rewind(&mut self) -> Result<(), TransportError> {
        Err(TransportError::NotReplayable)
    }
}

/// Writes `source` as schema + DATA frames + END. Returns the payload bytes
/// sent.
pub fn publish<S, W>(source: &mut S, writer: &mut FrameWriter<W>) -> Result<u64, TransportError>
where
    S: FrameSource + ?Sized,
    W: Write,
{
    writer.send(FrameType::Data, SCHEMA_COLUMN, &source.header().to_bytes())?;
    let mut bytes = 0;
    while let Some(frame) = source.next_frame()? {
        bytes += frame.payload.len() as u64;
        writer.send(FrameType::Data, frame.header.column_index, &frame.payload)?;
    }
    writer.send(FrameType::End, 0, &[])?;
    writer.flush()?;
    Ok(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::colfmt::generate_synthetic;
    use crate::transport::{BatchSink, FrameSink, BEAT_BYTES};
    use std::net::TcpListener;
    use std::thread;

    fn drain<S: FrameSource>(s: &mut S) -> Vec<StreamFrame> {
        let mut out = Vec::new();
        while let Some(f) = s.next_frame().unwrap() {
            out.push(f);
        }
        out
    }

    fn reassemble<S: FrameSource>(s: &mut S) -> ColumnBatch {
        let mut sink = BatchSink::new();
        sink.begin(s.header()).unwrap();
        while let Some(f) = s.next_frame().unwrap() {
            sink.accept(f).unwrap();
        }
        sink.finish().unwrap();
        sink.into_batch().unwrap()
    }

    fn sample(rows: usize) -> ColumnBatch {
        generate_synthetic(&DatasetSpec {
            rows,
            dense_features: 3,
            sparse_features: 2,
            seed: 1,
            ..DatasetSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn file_source_reassembles_48_byte_file() {
        let batch = sample(2);
        let batch =
            ColumnBatch::new(2, batch.dense()[..1].to_vec(), batch.sparse()[..1].to_vec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.col");
        std::fs::write(&path, batch.to_file_bytes()).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 48);
        let mut src = FileSource::open(&path).unwrap();
        assert_eq!(reassemble(&mut src), batch);
        src.rewind().unwrap();
        assert_eq!(reassemble(&mut src), batch);
    }

    #[test]
    fn memory_source_replays_identically() {
        let mut src = MemorySource::from_batch(&sample(20_000));
        let a = drain(&mut src);
        src.rewind().unwrap();
        let b = drain(&mut src);
        assert_eq!(a, b);
        assert!(a.len() > 5);
    }

    #[test]
    fn frames_are_beat_aligned_and_never_split_elements() {
        for width in [3u8, 8, 16] {
            let spec = DatasetSpec {
                rows: 5000,
                dense_features: 1,
                sparse_features: 1,
                token_width: width,
                sparse_cardinality: 100,
                ..DatasetSpec::default()
            };
            let mut src = MemorySource::from_batch(&generate_synthetic(&spec).unwrap())
                .with_max_payload(4096);
            let frames = drain(&mut src);
            for (i, f) in frames.iter().enumerate() {
                let w = src.header().element_width(f.column());
                assert_eq!(f.payload.len() % w, 0);
                let last_of_column = frames.get(i + 1).is_none_or(|n| n.column() != f.column());
                if !last_of_column {
                    assert_eq!(f.payload.len() % BEAT_BYTES, 0);
                }
                assert!(f.payload.len() <= 4096);
            }
        }
    }

    #[test]
    fn synthetic_source_matches_generator() {
        let spec = DatasetSpec {
            rows: 30_000,
            dense_features: 2,
            sparse_features: 3,
            seed: 99,
            ..DatasetSpec::default()
        };
        let mut src = SyntheticSource::new(spec.clone()).unwrap();
        assert_eq!(reassemble(&mut src), generate_synthetic(&spec).unwrap());
        src.rewind().unwrap();
        assert_eq!(reassemble(&mut src), generate_synthetic(&spec).unwrap());
    }

    #[test]
    fn truncated_memory_image_names_column() {
        let bytes = sample(10).to_file_bytes();
        let cut: Arc<[u8]> = bytes[..24 + 40 + 7].into();
        match MemorySource::new(cut) {
            Err(TransportError::Format(FormatError::Truncated { column: 1, .. })) => {}
            Err(other) => panic!("unexpected {other:?}"),
            Ok(_) => panic!("accepted a truncated image"),
        }
    }

    #[test]
    fn network_source_is_one_shot() {
        let batch = sample(3000);
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let to_send = batch.clone();
        let server = thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut w = FrameWriter::new(std::io::BufWriter::new(stream), 0);
            publish(&mut MemorySource::from_batch(&to_send), &mut w).unwrap();
        });
        let mut src = open_source(&Locator::Network(addr.to_string())).unwrap();
        assert!(!src.is_replayable());
        assert_eq!(reassemble(&mut src), batch);
        assert!(matches!(src.rewind(), Err(TransportError::NotReplayable)));
        server.join().unwrap();
    }

    #[test]
    fn unreachable_endpoint_is_reported() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        assert!(matches!(
            NetworkSource::connect(&addr.to_string()),
            Err(TransportError::Unreachable { .. })
        ));
    }

    #[test]
    fn malformed_frame_mid_stream_reports_sequence() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let header = ColumnFileHeader::new(1, 0, SparseKind::Value, 16);
            let mut w = FrameWriter::new(&mut stream, 0);
            w.send(FrameType::Data, SCHEMA_COLUMN, &header.to_bytes())
                .unwrap();
            w.send(FrameType::Data, 0, &[0u8; 32]).unwrap();
            let mut bad = crate::transport::FrameHeader {
                frame_type: FrameType::Data,
                slot_id: 0,
                column_index: 0,
                payload_len: 0,
                sequence: 3,
            }
            .to_bytes();
            bad[0] = 0x7f;
            stream.write_all(&bad).unwrap();
        });
        let mut src = NetworkSource::connect(&addr.to_string()).unwrap();
        assert!(src.next_frame().unwrap().is_some());
        match src.next_frame() {
            Err(TransportError::Protocol { sequence: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        server.join().unwrap();
    }
}
