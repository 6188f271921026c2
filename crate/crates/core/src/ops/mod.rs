//! Feature transformation operators.
//!
//! Dense: [`neg2zero`], [`logarithm`]. Sparse: [`hex2int`], [`modulus`] and
//! the stateful pair [`vocab_gen`] / [`vocab_map`]. Scalar functions define
//! the semantics; the `*_column` / `*_in_place` kernels apply them over
//! slices and attach row numbers to errors.

mod vocab;

use thiserror::Error;

pub use vocab::{vocab_gen, vocab_map, vocab_map_with, UnknownPolicy, VocabTable};

/// Vocabulary range of the small-table pipeline (8K).
pub const SMALL_VOCAB: u64 = 8 * 1024;
/// Vocabulary range of the large-table pipeline (512K).
pub const LARGE_VOCAB: u64 = 512 * 1024;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OpError {
    #[error("logarithm domain error at row {row}: input {value} is negative or NaN")]
    Domain { row: u64, value: f32 },
    #[error("invalid hex character {byte:#04x} at row {row}, position {position}")]
    InvalidHex { row: u64, position: usize, byte: u8 },
    #[error("token at row {row} has {actual} characters, expected {expected}")]
    TokenWidth {
        row: u64,
        expected: usize,
        actual: usize,
    },
    #[error("token width {0} outside 1..=16")]
    BadTokenWidth(usize),
    #[error("modulus must be at least 1")]
    ZeroModulus,
    #[error(
        "value {value} at row {row} is outside modulus range {modulus} (missing upstream modulus?)"
    )]
    OutOfRange { row: u64, value: u64, modulus: u64 },
    #[error("value {value} at row {row} is not in the vocabulary")]
    UnknownValue { row: u64, value: u64 },
    #[error("vocabulary table is full")]
    TableFull,
}

impl OpError {
    /// Shifts the row attribution by `offset` (scalar ops report row 0).
    pub fn offset_row(self, offset: u64) -> Self {
        match self {
            OpError::Domain { row, value } => OpError::Domain {
                row: row + offset,
                value,
            },
            OpError::InvalidHex {
                row,
                position,
                byte,
            } => OpError::InvalidHex {
                row: row + offset,
                position,
                byte,
            },
            OpError::TokenWidth {
                row,
                expected,
                actual,
            } => OpError::TokenWidth {
                row: row + offset,
                expected,
                actual,
            },
            OpError::OutOfRange {
                row,
                value,
                modulus,
            } => OpError::OutOfRange {
                row: row + offset,
                value,
                modulus,
            },
            OpError::UnknownValue { row, value } => OpError::UnknownValue {
                row: row + offset,
                value,
            },
            other => other,
        }
    }

    pub fn row(&self) -> Option<u64> {
        match self {
            OpError::Domain { row, .. }
            | OpError::InvalidHex { row, .. }
            | OpError::TokenWidth { row, .. }
            | OpError::OutOfRange { row, .. }
            | OpError::UnknownValue { row, .. } => Some(*row),
            _ => None,
        }
    }
}

/// Modulus range `M >= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Modulus(u64);

impl Modulus {
    pub fn new(m: u64) -> Result<Self, OpError> {
        if m == 0 {
            Err(OpError::ZeroModulus)
        } else {
            Ok(Self(m))
        }
    }

    pub fn get(self) -> u64 {
        self.0
    }
}

/// Hex token width `1 <= W <= 16`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TokenWidth(u8);

impl TokenWidth {
    pub fn new(w: usize) -> Result<Self, OpError> {
        if (1..=16).contains(&w) {
            Ok(Self(w as u8))
        } else {
            Err(OpError::BadTokenWidth(w))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }
}

impl Default for TokenWidth {
    fn default() -> Self {
        Self(8)
    }
}

/// Clips negatives to zero. NaN is treated as missing and also becomes zero.
#[inline]
pub fn neg2zero(x: f32) -> f32 {
    // -0.0 is not below zero and passes through unchanged.
    if x < 0.0 || x.is_nan() {
        0.0
    } else {
        x
    }
}

/// `ln(x + 1)`, evaluated in f64 and rounded to f32.
#[inline]
pub fn logarithm(x: f32) -> Result<f32, OpError> {
    if x >= 0.0 {
        Ok(f64::from(x).ln_1p() as f32)
    } else {
        Err(OpError::Domain { row: 0, value: x })
    }
}

const HEX_INVALID: u8 = 0xff;

static HEX_DIGITS: [u8; 256] = {
    let mut t = [HEX_INVALID; 256];
    let mut i = 0;
    while i < 10 {
        t[b'0' as usize + i] = i as u8;
        i += 1;
    }
    let mut i = 0;
    while i < 6 {
        t[b'a' as usize + i] = 10 + i as u8;
        t[b'A' as usize + i] = 10 + i as u8;
        i += 1;
    }
    t
};

/// Parses a hex token, most significant digit first.
#[inline]
pub fn hex2int(token: &[u8]) -> Result<u64, OpError> {
    if token.is_empty() || token.len() > 16 {
        return Err(OpError::BadTokenWidth(token.len()));
    }
    let mut v = 0u64;
    for (position, &byte) in token.iter().enumerate() {
        let d = HEX_DIGITS[usize::from(byte)];
        if d == HEX_INVALID {
            return Err(OpError::InvalidHex {
                row: 0,
                position,
                byte,
            });
        }
        v = (v << 4) | u64::from(d);
    }
    Ok(v)
}

/// Writes `value` as lowercase hex filling all of `out` (most significant
/// digit first). Higher digits that do not fit are dropped.
pub fn format_hex_into(value: u64, out: &mut [u8]) {
    const DIGITS: &[u8; 16] = b"0123456789abcdef";
    let w = out.len();
    for (i, slot) in out.iter_mut().enumerate() {
        let shift = 4 * (w - 1 - i);
        *slot = if shift >= 64 {
            b'0'
        } else {
            DIGITS[((value >> shift) & 0xf) as usize]
        };
    }
}

pub fn format_hex(value: u64, width: TokenWidth) -> String {
    let mut buf = vec![0u8; usize::from(width.get())];
    format_hex_into(value, &mut buf);
    String::from_utf8(buf).expect("hex digits are ascii")
}

/// `v mod M`, always in `[0, M)`.
#[inline]
pub fn modulus(v: u64, m: Modulus) -> u64 {
    v % m.get()
}

/// Positive modulus for signed inputs: `((v mod M) + M) mod M`. The unsigned
/// [`modulus`] is the special case for non-negative `v`.
pub fn positive_modulus(v: i64, m: Modulus) -> u64 {
    i128::from(v).rem_euclid(i128::from(m.get())) as u64
}

pub fn neg2zero_in_place(values: &mut [f32]) {
    for v in values {
        *v = neg2zero(*v);
    }
}

pub fn logarithm_in_place(values: &mut [f32], first_row: u64) -> Result<(), OpError> {
    for (i, v) in values.iter_mut().enumerate() {
        *v = logarithm(*v).map_err(|e| e.offset_row(first_row + i as u64))?;
    }
    Ok(())
}

/// Parses contiguous `width`-byte tokens, appending to `out`.
pub fn hex2int_column(
    tokens: &[u8],
    width: TokenWidth,
    first_row: u64,
    out: &mut Vec<u64>,
) -> Result<(), OpError> {
    let w = usize::from(width.get());
    if tokens.len() % w != 0 {
        return Err(OpError::TokenWidth {
            row: first_row + (tokens.len() / w) as u64,
            expected: w,
            actual: tokens.len() % w,
        });
    }
    out.reserve(tokens.len() / w);
    for (i, t) in tokens.chunks_exact(w).enumerate() {
        out.push(hex2int(t).map_err(|e| e.offset_row(first_row + i as u64))?);
    }
    Ok(())
}

pub fn modulus_in_place(values: &mut [u64], m: Modulus) {
    let m = m.get();
    if m.is_power_of_two() {
        let mask = m - 1;
        for v in values {
            *v &= mask;
        }
    } else {
        for v in values {
            *v %= m;
        }
    }
}
