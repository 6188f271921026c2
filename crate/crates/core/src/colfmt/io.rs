use std::io::{self, Read, Write};

use super::{
    dense_name, sparse_name, ColumnBatch, ColumnFileHeader, DenseColumn, FormatError, HexTokens,
    SparseColumn, SparseData, SparseKind, HEADER_LEN, MAGIC,
};

/// Writes `batch` as a column file. Returns the number of bytes written.
pub fn write_column_file<W: Write>(batch: &ColumnBatch, sink: W) -> Result<u64, FormatError> {
    let header = batch.header();
    let mut writer = ColumnWriter::new(sink, header)?;
    for (i, col) in batch.dense().iter().enumerate() {
        let mut buf = Vec::with_capacity(col.values.len() * 4);
        for v in &col.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        writer.write_payload(i, &buf)?;
    }
    let base = batch.dense().len();
    for (i, col) in batch.sparse().iter().enumerate() {
        match &col.data {
            SparseData::Hex(t) => writer.write_payload(base + i, t.as_bytes())?,
            other => writer.write_payload(base + i, &other.to_le_bytes())?,
        }
    }
    let (_, written) = writer.finish()?;
    Ok(written)
}

/// Reads a whole column file into memory.
pub fn read_column_file<R: Read>(source: R) -> Result<ColumnBatch, FormatError> {
    let mut reader = ColumnReader::open(source)?;
    let header = *reader.header();
    let mut dense = Vec::with_capacity(usize::from(header.dense_count));
    let mut sparse = Vec::with_capacity(usize::from(header.sparse_count));
    while let Some(col) = reader.next_column() {
        match col? {
            OwnedColumn::Dense(c) => dense.push(c),
            OwnedColumn::Sparse(c) => sparse.push(c),
        }
    }
    ColumnBatch::with_kind(header.row_count as usize, header.sparse_kind, dense, sparse)
}

struct CountingWriter<W> {
    inner: W,
    written: u64,
}

impl<W: Write> CountingWriter<W> {
    fn put(&mut self, bytes: &[u8]) -> Result<(), FormatError> {
        let mut rest = bytes;
        while !rest.is_empty() {
            match self.inner.write(rest) {
                Ok(0) => {
                    return Err(FormatError::Write {
                        written: self.written,
                        source: io::Error::from(io::ErrorKind::WriteZero),
                    })
                }
                Ok(n) => {
                    self.written += n as u64;
                    rest = &rest[n..];
                }
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(source) => {
                    return Err(FormatError::Write {
                        written: self.written,
                        source,
                    })
                }
            }
        }
        Ok(())
    }
}

/// Streaming column file writer. Payload must arrive in column order; a
/// column may be written in any number of pieces.
pub struct ColumnWriter<W: Write> {
    out: CountingWriter<W>,
    header: ColumnFileHeader,
    column: usize,
    column_written: u64,
}

impl<W: Write> ColumnWriter<W> {
    pub fn new(sink: W, header: ColumnFileHeader) -> Result<Self, FormatError> {
        let mut out = CountingWriter {
            inner: sink,
            written: 0,
        };
        out.put(&header.to_bytes())?;
        let mut w = Self {
            out,
            header,
            column: 0,
            column_written: 0,
        };
        w.skip_complete();
        Ok(w)
    }

    pub fn header(&self) -> &ColumnFileHeader {
        &self.header
    }

    pub fn bytes_written(&self) -> u64 {
        self.out.written
    }

    fn skip_complete(&mut self) {
        while self.column < self.header.column_count()
            && self.column_written == self.header.column_len(self.column)
        {
            self.column += 1;
            self.column_written = 0;
        }
    }

    pub fn write_payload(&mut self, column: usize, bytes: &[u8]) -> Result<(), FormatError> {
        if bytes.is_empty() {
            return Ok(());
        }
        if column != self.column {
            return Err(FormatError::InvalidBatch(format!(
                "payload for column {column} while column {} is open",
                self.column
            )));
        }
        let remaining = self.header.column_len(column) - self.column_written;
        if bytes.len() as u64 > remaining {
            return Err(FormatError::InvalidBatch(format!(
                "column {column} overflows by {} bytes",
                bytes.len() as u64 - remaining
            )));
        }
        self.out.put(bytes)?;
        self.column_written += bytes.len() as u64;
        self.skip_complete();
        Ok(())
    }

    pub fn is_complete(&self) -> bool {
        self.column >= self.header.column_count()
    }

    /// Flushes and returns the sink with the total byte count.
    pub fn finish(mut self) -> Result<(W, u64), FormatError> {
        if !self.is_complete() {
            return Err(FormatError::Truncated {
                column: self.column,
                expected: self.header.column_len(self.column),
                actual: self.column_written,
            });
        }
        let written = self.out.written;
        self.out
            .inner
            .flush()
            .map_err(|source| FormatError::Write { written, source })?;
        Ok((self.out.inner, written))
    }
}

impl<W: Write> std::fmt::Debug for ColumnWriter<W> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ColumnWriter")
            .field("header", self.header())
            .field("written", &self.bytes_written())
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OwnedColumn {
    Dense(DenseColumn),
    Sparse(SparseColumn),
}

/// Streaming column file reader.
pub struct ColumnReader<R: Read> {
    source: R,
    header: ColumnFileHeader,
    column: usize,
    column_read: u64,
}

fn read_up_to<R: Read>(source: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match source.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

impl<R: Read> ColumnReader<R> {
    pub fn open(mut source: R) -> Result<Self, FormatError> {
        let mut buf = [0u8; HEADER_LEN];
        let n = read_up_to(&mut source, &mut buf)?;
        if n < HEADER_LEN {
            // Surface a magic mismatch before complaining about length.
            if n >= 8 && buf[..8] != MAGIC {
                let mut found = [0u8; 8];
                found.copy_from_slice(&buf[..8]);
                return Err(FormatError::BadMagic { found });
            }
            return Err(FormatError::InvalidHeader(format!(
                "header truncated at {n} bytes"
            )));
        }
        let header = ColumnFileHeader::from_bytes(&buf)?;
        Ok(Self {
            source,
            header,
            column: 0,
            column_read: 0,
        })
    }

    pub fn header(&self) -> &ColumnFileHeader {
        &self.header
    }

    pub fn into_inner(self) -> R {
        self.source
    }

    /// Index of the column the next chunk will come from.
    pub fn current_column(&self) -> usize {
        self.column
    }

    /// Reads up to `max_elements` elements of the current column. Returns
    /// `None` once every column has been consumed.
    pub fn read_chunk(
        &mut self,
        max_elements: usize,
    ) -> Result<Option<(usize, Vec<u8>)>, FormatError> {
        while self.column < self.header.column_count()
            && self.column_read == self.header.column_len(self.column)
        {
            self.column += 1;
            self.column_read = 0;
        }
        if self.column >= self.header.column_count() {
            return Ok(None);
        }
        let column = self.column;
        let width = self.header.element_width(column) as u64;
        let remaining = self.header.column_len(column) - self.column_read;
        let want = remaining.min(max_elements.max(1) as u64 * width) as usize;
        let mut buf = vec![0u8; want];
        let n = read_up_to(&mut self.source, &mut buf)?;
        self.column_read += n as u64;
        if n < want {
            return Err(FormatError::Truncated {
                column,
                expected: self.header.column_len(column),
                actual: self.column_read,
            });
        }
        Ok(Some((column, buf)))
    }

    /// Reads the next whole column.
    pub fn next_column(&mut self) -> Option<Result<OwnedColumn, FormatError>> {
        if self.column >= self.header.column_count() {
            return None;
        }
        let column = self.column;
        let len = self.header.column_len(column) as usize;
        let width = self.header.element_width(column);
        let mut bytes = Vec::with_capacity(len);
        while self.column == column && bytes.len() < len {
            match self.read_chunk(1 << 16) {
                Ok(Some((_, chunk))) => bytes.extend_from_slice(&chunk),
                Ok(None) => break,
                Err(e) => return Some(Err(e)),
            }
        }
        if self.column == column && self.column_read == len as u64 {
            self.column += 1;
            self.column_read = 0;
        }
        let dense_count = usize::from(self.header.dense_count);
        let col = if column < dense_count {
            let values = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            OwnedColumn::Dense(DenseColumn::new(dense_name(column), values))
        } else {
            let idx = column - dense_count;
            let data = match self.header.sparse_kind {
                SparseKind::Hex { width: w } => match HexTokens::new(w, bytes) {
                    Ok(t) => SparseData::Hex(t),
                    Err(FormatError::InvalidToken { row, reason, .. }) => {
                        return Some(Err(FormatError::InvalidToken {
                            column,
                            row,
                            reason,
                        }))
                    }
                    Err(e) => return Some(Err(e)),
                },
                SparseKind::Value => SparseData::Values(
                    bytes
                        .chunks_exact(width)
                        .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                        .collect(),
                ),
                SparseKind::Index => SparseData::Indices(
                    bytes
                        .chunks_exact(width)
                        .map(|c| u32::from_le_bytes(c.try_into().expect("4-byte chunk")))
                        .collect(),
                ),
            };
            OwnedColumn::Sparse(SparseColumn::new(sparse_name(idx), data))
        };
        Some(Ok(col))
    }
}
