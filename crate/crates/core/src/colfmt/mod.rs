//! Columnar data model and the `MPCOL` binary container.
//!
//! A column file is a fixed 24-byte header followed by every column's payload,
//! column-major: all dense columns (little-endian `f32`), then all sparse
//! columns. Sparse payload elements are either fixed-width hexadecimal ASCII
//! tokens (raw input), little-endian `u64` values (after hex parsing and
//! modulus) or little-endian `u32` vocabulary indices. The element kind is
//! carried in the header's kind byte.
//!
//! ```text
//! offset  size  field
//!      0     8  magic "MPCOL\0\0\x01"
//!      8     2  version (1)
//!     10     2  dense column count
//!     12     2  sparse column count
//!     14     1  sparse element width in bytes (token width W for hex)
//!     15     1  sparse kind: 0 = hex tokens, 1 = u64 values, 2 = u32 indices
//!     16     8  row count
//! ```
//!
//! Column names are not persisted; readers assign positional names
//! (`dense_0`, `sparse_0`, ...).

mod io;
mod synth;

use std::fmt;

use thiserror::Error;

pub use io::{read_column_file, write_column_file, ColumnReader, ColumnWriter, OwnedColumn};
pub use synth::{generate_synthetic, DatasetSpec, DenseGenerator, SparseGenerator};

pub const MAGIC: [u8; 8] = *b"MPCOL\0\0\x01";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 24;
pub const DEFAULT_TOKEN_WIDTH: u8 = 8;
pub const MAX_TOKEN_WIDTH: u8 = 16;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic {found:?}, not a column file")]
    BadMagic { found: [u8; 8] },
    #[error("unsupported column file version {0}")]
    UnsupportedVersion(u16),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("column {column} truncated: expected {expected} bytes, got {actual}")]
    Truncated {
        column: usize,
        expected: u64,
        actual: u64,
    },
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error("invalid token in column {column} at row {row}: {reason}")]
    InvalidToken {
        column: usize,
        row: u64,
        reason: String,
    },
    #[error("invalid dataset spec: {0}")]
    InvalidSpec(String),
    #[error("write failed after {written} bytes: {source}")]
    Write {
        written: u64,
        #[source]
        source: std::io::Error,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Element encoding of the sparse section.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SparseKind {
    /// Fixed-width hexadecimal ASCII tokens.
    Hex { width: u8 },
    /// Parsed (and usually range-reduced) integer values.
    Value,
    /// Vocabulary indices.
    Index,
}

impl SparseKind {
    pub fn element_width(self) -> usize {
        match self {
            SparseKind::Hex { width } => usize::from(width),
            SparseKind::Value => 8,
            SparseKind::Index => 4,
        }
    }

    fn tag(self) -> u8 {
        match self {
            SparseKind::Hex { .. } => 0,
            SparseKind::Value => 1,
            SparseKind::Index => 2,
        }
    }

    fn from_parts(tag: u8, width: u8) -> Result<Self, FormatError> {
        let kind = match tag {
            0 => {
                check_token_width(width)?;
                SparseKind::Hex { width }
            }
            1 => SparseKind::Value,
            2 => SparseKind::Index,
            other => {
                return Err(FormatError::InvalidHeader(format!(
                    "unknown sparse kind tag {other}"
                )))
            }
        };
        if kind.element_width() != usize::from(width) {
            return Err(FormatError::InvalidHeader(format!(
                "sparse element width {width} does not match kind {kind}"
            )));
        }
        Ok(kind)
    }
}

impl fmt::Display for SparseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SparseKind::Hex { width } => write!(f, "hex{width}"),
            SparseKind::Value => f.write_str("u64"),
            SparseKind::Index => f.write_str("u32-index"),
        }
    }
}

pub(crate) fn check_token_width(width: u8) -> Result<(), FormatError> {
    if (1..=MAX_TOKEN_WIDTH).contains(&width) {
        Ok(())
    } else {
        Err(FormatError::InvalidHeader(format!(
            "token width {width} outside 1..={MAX_TOKEN_WIDTH}"
        )))
    }
}

/// The fixed 24-byte file header. Also used as the stream schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnFileHeader {
    pub dense_count: u16,
    pub sparse_count: u16,
    pub sparse_kind: SparseKind,
    pub row_count: u64,
}

impl ColumnFileHeader {
    pub fn new(
        dense_count: u16,
        sparse_count: u16,
        sparse_kind: SparseKind,
        row_count: u64,
    ) -> Self {
        Self {
            dense_count,
            sparse_count,
            sparse_kind,
            row_count,
        }
    }

    pub fn version(&self) -> u16 {
        FORMAT_VERSION
    }

    pub fn column_count(&self) -> usize {
        usize::from(self.dense_count) + usize::from(self.sparse_count)
    }

    pub fn is_dense(&self, column: usize) -> bool {
        column < usize::from(self.dense_count)
    }

    /// Width in bytes of one element of `column`.
    pub fn element_width(&self, column: usize) -> usize {
        if self.is_dense(column) {
            4
        } else {
            self.sparse_kind.element_width()
        }
    }

    pub fn column_len(&self, column: usize) -> u64 {
        self.row_count * self.element_width(column) as u64
    }

    /// Byte offset of `column`'s payload from the start of the file.
    pub fn column_offset(&self, column: usize) -> u64 {
        let dense = usize::from(self.dense_count);
        let dense_before = column.min(dense) as u64;
        let sparse_before = column.saturating_sub(dense) as u64;
        HEADER_LEN as u64
            + dense_before * 4 * self.row_count
            + sparse_before * self.sparse_kind.element_width() as u64 * self.row_count
    }

    pub fn payload_len(&self) -> u64 {
        self.row_count
            * (4 * u64::from(self.dense_count)
                + self.sparse_kind.element_width() as u64 * u64::from(self.sparse_count))
    }

    pub fn file_len(&self) -> u64 {
        HEADER_LEN as u64 + self.payload_len()
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..8].copy_from_slice(&MAGIC);
        out[8..10].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
        out[10..12].copy_from_slice(&self.dense_count.to_le_bytes());
        out[12..14].copy_from_slice(&self.sparse_count.to_le_bytes());
        out[14] = self.sparse_kind.element_width() as u8;
        out[15] = self.sparse_kind.tag();
        out[16..24].copy_from_slice(&self.row_count.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        if bytes.len() < HEADER_LEN {
            return Err(FormatError::InvalidHeader(format!(
                "header needs {HEADER_LEN} bytes, got {}",
                bytes.len()
            )));
        }
        let mut magic = [0u8; 8];
        magic.copy_from_slice(&bytes[0..8]);
        if magic != MAGIC {
            return Err(FormatError::BadMagic { found: magic });
        }
        let version = u16::from_le_bytes([bytes[8], bytes[9]]);
        if version != FORMAT_VERSION {
            return Err(FormatError::UnsupportedVersion(version));
        }
        let dense_count = u16::from_le_bytes([bytes[10], bytes[11]]);
        let sparse_count = u16::from_le_bytes([bytes[12], bytes[13]]);
        let sparse_kind = SparseKind::from_parts(bytes[15], bytes[14])?;
        let mut rows = [0u8; 8];
        rows.copy_from_slice(&bytes[16..24]);
        Ok(Self {
            dense_count,
            sparse_count,
            sparse_kind,
            row_count: u64::from_le_bytes(rows),
        })
    }
}

pub fn dense_name(index: usize) -> String {
    format!("dense_{index}")
}

pub fn sparse_name(index: usize) -> String {
    format!("sparse_{index}")
}

/// A column of 32-bit floats. NaN encodes a missing value.
///
/// Equality is bitwise so that NaN payloads compare equal to themselves.
#[derive(Debug, Clone)]
pub struct DenseColumn {
    pub name: String,
    pub values: Vec<f32>,
}

impl DenseColumn {
    pub fn new(name: impl Into<String>, values: Vec<f32>) -> Self {
        Self {
            name: name.into(),
            values,
        }
    }
}

impl PartialEq for DenseColumn {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.values.len() == other.values.len()
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Contiguous fixed-width hexadecimal tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HexTokens {
    width: u8,
    bytes: Vec<u8>,
}

impl HexTokens {
    /// Validates width and that every byte is an ASCII hex digit.
    pub fn new(width: u8, bytes: Vec<u8>) -> Result<Self, FormatError> {
        check_token_width(width)?;
        let w = usize::from(width);
        if bytes.len() % w != 0 {
            return Err(FormatError::InvalidBatch(format!(
                "{} token bytes is not a multiple of width {width}",
                bytes.len()
            )));
        }
        if let Some(pos) = bytes.iter().position(|b| !b.is_ascii_hexdigit()) {
            return Err(FormatError::InvalidToken {
                column: 0,
                row: (pos / w) as u64,
                reason: format!(
                    "byte {:#04x} at position {} is not hex",
                    bytes[pos],
                    pos % w
                ),
            });
        }
        Ok(Self { width, bytes })
    }

    pub fn from_tokens<S: AsRef<[u8]>>(width: u8, tokens: &[S]) -> Result<Self, FormatError> {
        let mut bytes = Vec::with_capacity(tokens.len() * usize::from(width));
        for (row, t) in tokens.iter().enumerate() {
            let t = t.as_ref();
            if t.len() != usize::from(width) {
                return Err(FormatError::InvalidToken {
                    column: 0,
                    row: row as u64,
                    reason: format!("token has {} characters, expected {width}", t.len()),
                });
            }
            bytes.extend_from_slice(t);
        }
        Self::new(width, bytes)
    }

    pub fn width(&self) -> u8 {
        self.width
    }

    pub fn len(&self) -> usize {
        self.bytes.len() / usize::from(self.width)
    }

    pub fn is_empty(&self) -> bool {
        self.bytes.is_empty()
    }

    pub fn token(&self, row: usize) -> &[u8] {
        let w = usize::from(self.width);
        &self.bytes[row * w..(row + 1) * w]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, u8> {
        self.bytes.chunks_exact(usize::from(self.width))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SparseData {
    Hex(HexTokens),
    Values(Vec<u64>),
    Indices(Vec<u32>),
}

impl SparseData {
    pub fn kind(&self) -> SparseKind {
        match self {
            SparseData::Hex(t) => SparseKind::Hex { width: t.width() },
            SparseData::Values(_) => SparseKind::Value,
            SparseData::Indices(_) => SparseKind::Index,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SparseData::Hex(t) => t.len(),
            SparseData::Values(v) => v.len(),
            SparseData::Indices(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Little-endian payload bytes as laid out in a column file.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            SparseData::Hex(t) => t.as_bytes().to_vec(),
            SparseData::Values(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            SparseData::Indices(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseColumn {
    pub name: String,
    pub data: SparseData,
}

impl SparseColumn {
    pub fn new(name: impl Into<String>, data: SparseData) -> Self {
        Self {
            name: name.into(),
            data,
        }
    }

    pub fn hex(name: impl Into<String>, tokens: HexTokens) -> Self {
        Self::new(name, SparseData::Hex(tokens))
    }
}

/// An immutable set of equal-length columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnBatch {
    row_count: usize,
    sparse_kind: SparseKind,
    dense: Vec<DenseColumn>,
    sparse: Vec<SparseColumn>,
}

impl ColumnBatch {
    /// Builds a batch, inferring the sparse kind from the first sparse
    /// column (hex width 8 when there are none).
    pub fn new(
        row_count: usize,
        dense: Vec<DenseColumn>,
        sparse: Vec<SparseColumn>,
    ) -> Result<Self, FormatError> {
        let kind = sparse.first().map_or(
            SparseKind::Hex {
                width: DEFAULT_TOKEN_WIDTH,
            },
            |c| c.data.kind(),
        );
        Self::with_kind(row_count, kind, dense, sparse)
    }

    pub fn with_kind(
        row_count: usize,
        sparse_kind: SparseKind,
        dense: Vec<DenseColumn>,
        sparse: Vec<SparseColumn>,
    ) -> Result<Self, FormatError> {
        if dense.len() > usize::from(u16::MAX) || sparse.len() > usize::from(u16::MAX) {
            return Err(FormatError::InvalidBatch("too many columns".into()));
        }
        if let SparseKind::Hex { width } = sparse_kind {
            check_token_width(width)?;
        }
        for c in &dense {
            if c.values.len() != row_count {
                return Err(FormatError::InvalidBatch(format!(
                    "dense column {:?} has {} rows, batch has {row_count}",
                    c.name,
                    c.values.len()
                )));
            }
        }
        for c in &sparse {
            if c.data.len() != row_count {
                return Err(FormatError::InvalidBatch(format!(
                    "sparse column {:?} has {} rows, batch has {row_count}",
                    c.name,
                    c.data.len()
                )));
            }
            if c.data.kind() != sparse_kind {
                return Err(FormatError::InvalidBatch(format!(
                    "sparse column {:?} is {}, batch is {sparse_kind}",
                    c.name,
                    c.data.kind()
                )));
            }
        }
        let mut names: Vec<&str> = dense
            .iter()
            .map(|c| c.name.as_str())
            .chain(sparse.iter().map(|c| c.name.as_str()))
            .collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(FormatError::InvalidBatch(format!(
                "duplicate column name {:?}",
                w[0]
            )));
        }
        Ok(Self {
            row_count,
            sparse_kind,
            dense,
            sparse,
        })
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn sparse_kind(&self) -> SparseKind {
        self.sparse_kind
    }

    pub fn dense(&self) -> &[DenseColumn] {
        &self.dense
    }

    pub fn sparse(&self) -> &[SparseColumn] {
        &self.sparse
    }

    pub fn header(&self) -> ColumnFileHeader {
        ColumnFileHeader::new(
            self.dense.len() as u16,
            self.sparse.len() as u16,
            self.sparse_kind,
            self.row_count as u64,
        )
    }

    /// Payload bytes of column `index` in file order (dense first).
    pub fn column_bytes(&self, index: usize) -> Vec<u8> {
        if index < self.dense.len() {
            self.dense[index]
                .values
                .iter()
                .flat_map(|v| v.to_le_bytes())
                .collect()
        } else {
            self.sparse[index - self.dense.len()].data.to_le_bytes()
        }
    }

    /// Serialised column file image.
    pub fn to_file_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.header().file_len() as usize);
        // Writing into a Vec cannot fail.
        let _ = write_column_file(self, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_fixed() {
        let h = ColumnFileHeader::new(1, 2, SparseKind::Hex { width: 8 }, 0x0102);
        let b = h.to_bytes();
        assert_eq!(&b[..8], b"MPCOL\0\0\x01");
        assert_eq!(&b[8..10], &[1, 0]);
        assert_eq!(&b[10..12], &[1, 0]);
        assert_eq!(&b[12..14], &[2, 0]);
        assert_eq!(b[14], 8);
        assert_eq!(b[15], 0);
        assert_eq!(&b[16..24], &[2, 1, 0, 0, 0, 0, 0, 0]);
        assert_eq!(ColumnFileHeader::from_bytes(&b).unwrap(), h);
    }

    #[test]
    fn header_rejects_bad_magic_and_width() {
        let mut b = ColumnFileHeader::new(0, 0, SparseKind::Value, 0).to_bytes();
        b[..8].copy_from_slice(b"XXXXXXXX");
        assert!(matches!(
            ColumnFileHeader::from_bytes(&b),
            Err(FormatError::BadMagic { .. })
        ));

        let mut b = ColumnFileHeader::new(0, 1, SparseKind::Value, 0).to_bytes();
        b[14] = 4;
        assert!(ColumnFileHeader::from_bytes(&b).is_err());

        let mut b = ColumnFileHeader::new(0, 1, SparseKind::Hex { width: 8 }, 0).to_bytes();
        b[14] = 17;
        assert!(ColumnFileHeader::from_bytes(&b).is_err());
    }

    #[test]
    fn offsets_follow_column_major_layout() {
        let h = ColumnFileHeader::new(2, 3, SparseKind::Hex { width: 8 }, 10);
        assert_eq!(h.column_offset(0), 24);
        assert_eq!(h.column_offset(1), 64);
        assert_eq!(h.column_offset(2), 104);
        assert_eq!(h.column_offset(3), 184);
        assert_eq!(h.column_offset(5), h.file_len());
        assert_eq!(h.payload_len(), 2 * 40 + 3 * 80);
    }

    #[test]
    fn batch_validation() {
        let tokens = HexTokens::from_tokens(8, &["0000000a"]).unwrap();
        let err = ColumnBatch::new(
            2,
            vec![DenseColumn::new("a", vec![1.0, 2.0])],
            vec![SparseColumn::hex("b", tokens.clone())],
        );
        assert!(matches!(err, Err(FormatError::InvalidBatch(_))));

        let err = ColumnBatch::new(
            1,
            vec![DenseColumn::new("a", vec![1.0])],
            vec![SparseColumn::hex("a", tokens)],
        );
        assert!(matches!(err, Err(FormatError::InvalidBatch(m)) if m.contains("duplicate")));

        let mixed = ColumnBatch::new(
            1,
            vec![],
            vec![
                SparseColumn::new("x", SparseData::Values(vec![1])),
                SparseColumn::new("y", SparseData::Indices(vec![1])),
            ],
        );
        assert!(mixed.is_err());
    }

    #[test]
    fn hex_tokens_reject_non_hex() {
        let err = HexTokens::from_tokens(4, &["00a0", "00g0"]).unwrap_err();
        match err {
            FormatError::InvalidToken { row, reason, .. } => {
                assert_eq!(row, 1);
                assert!(reason.contains("position 2"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nan_columns_compare_bitwise() {
        let a = DenseColumn::new("x", vec![f32::NAN, 1.0]);
        assert_eq!(a, a.clone());
        assert_ne!(a, DenseColumn::new("x", vec![-f32::NAN, 1.0]));
    }
}
