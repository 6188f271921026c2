//! Naive single-threaded reference for all pipelines.
//!
//! Straight loops over whole columns, written directly from the operator
//! definitions. Nothing here calls into [`crate::ops`] kernels or the
//! engine, so agreement between the two is evidence rather than tautology.

use std::collections::HashMap;

use thiserror::Error;

use crate::colfmt::{ColumnBatch, DenseColumn, FormatError, SparseColumn, SparseData, SparseKind};
use crate::ops::OpError;
use crate::pipeline::{DenseOp, PipelineSpec, SparseOp};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("column {column}: {source}")]
    Operator {
        column: usize,
        #[source]
        source: OpError,
    },
    #[error("input does not fit the pipeline: {0}")]
    Schema(String),
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub dense_out: Vec<DenseColumn>,
    /// `u32` indices for stateful specs, `u64` values for stateless ones
    /// (or the untouched input when the sparse chain is empty).
    pub sparse_out: Vec<SparseColumn>,
    /// Per sparse column, the distinct values in first-occurrence order; a
    /// value's index is its position. Empty for stateless specs.
    pub tables: Vec<Vec<u64>>,
    /// Declared sparse kind of the output, which matters when there are no
    /// sparse columns to infer it from.
    pub sparse_kind: SparseKind,
    pub rows: usize,
}

impl OracleResult {
    pub fn to_batch(&self) -> Result<ColumnBatch, FormatError> {
        ColumnBatch::with_kind(
            self.rows,
            self.sparse_kind,
            self.dense_out.clone(),
            self.sparse_out.clone(),
        )
    }
}

/// Applies `spec` to `batch` the slow, obvious way.
pub fn oracle_run(batch: &ColumnBatch, spec: &PipelineSpec) -> Result<OracleResult, OracleError> {
    let dense_count = batch.dense().len();

    let mut dense_out = Vec::new();
    for (c, col) in batch.dense().iter().enumerate() {
        let mut values = Vec::new();
        for (row, &x) in col.values.iter().enumerate() {
            let mut v = x;
            for op in spec.dense_chain() {
                v = match op {
                    DenseOp::Neg2Zero => {
                        if v.is_nan() || v < 0.0 {
                            0.0
                        } else {
                            v
                        }
                    }
                    DenseOp::Logarithm => {
                        if v.is_nan() || v < 0.0 {
                            return Err(OracleError::Operator {
                                column: c,
                                source: OpError::Domain {
                                    row: row as u64,
                                    value: v,
                                },
                            });
                        }
                        // ln(1 + v) in double precision, rounded once to f32.
                        (v as f64).ln_1p() as f32
                    }
                };
            }
            values.push(v);
        }
        dense_out.push(DenseColumn::new(col.name.clone(), values));
    }

    let chain = spec.sparse_chain();
    let mut sparse_out = Vec::new();
    let mut tables = Vec::new();
    for (s, col) in batch.sparse().iter().enumerate() {
        let column = dense_count + s;
        if chain.is_empty() {
            sparse_out.push(col.clone());
            continue;
        }
        let op_err = |source| OracleError::Operator { column, source };

        // Step 1: get u64 values.
        let mut values: Vec<u64> = Vec::new();
        match (&col.data, chain[0]) {
            (SparseData::Hex(tokens), SparseOp::Hex2Int) => {
                for row in 0..tokens.len() {
                    let token = tokens.token(row);
                    for (position, &byte) in token.iter().enumerate() {
                        if !byte.is_ascii_hexdigit() {
                            return Err(op_err(OpError::InvalidHex {
                                row: row as u64,
                                position,
                                byte,
                            }));
                        }
                    }
                    let text = std::str::from_utf8(token).expect("hex digits are ascii");
                    values.push(u64::from_str_radix(text, 16).expect("validated hex"));
                }
            }
            (SparseData::Values(v), op) if op != SparseOp::Hex2Int => values = v.clone(),
            (data, op) => {
                return Err(OracleError::Schema(format!(
                    "{op} cannot consume {} input",
                    data.kind()
                )));
            }
        }

        // Step 2: modulus.
        if chain.contains(&SparseOp::Modulus) {
            let m = spec.modulus().expect("validated").get();
            for v in values.iter_mut() {
                *v %= m;
            }
        }

        // Step 3: vocabulary, two scans.
        if chain.contains(&SparseOp::VocabGen) {
            let m = spec.modulus().expect("validated").get();
            let mut keys: Vec<u64> = Vec::new();
            let mut index: HashMap<u64, u32> = HashMap::new();
            for (row, &v) in values.iter().enumerate() {
                if v >= m {
                    return Err(op_err(OpError::OutOfRange {
                        row: row as u64,
                        value: v,
                        modulus: m,
                    }));
                }
                if !index.contains_key(&v) {
                    index.insert(v, keys.len() as u32);
                    keys.push(v);
                }
            }
            let mut mapped: Vec<u32> = Vec::new();
            for (row, &v) in values.iter().enumerate() {
                match index.get(&v) {
                    Some(&i) => mapped.push(i),
                    None => {
                        return Err(op_err(OpError::UnknownValue {
                            row: row as u64,
                            value: v,
                        }))
                    }
                }
            }
            sparse_out.push(SparseColumn::new(
                col.name.clone(),
                SparseData::Indices(mapped),
            ));
            tables.push(keys);
        } else {
            sparse_out.push(SparseColumn::new(
                col.name.clone(),
                SparseData::Values(values),
            ));
        }
    }

    let sparse_kind = if chain.is_empty() {
        batch.sparse_kind()
    } else if chain.contains(&SparseOp::VocabGen) {
        SparseKind::Index
    } else {
        SparseKind::Value
    };
    Ok(OracleResult {
        dense_out,
        sparse_out,
        tables,
        sparse_kind,
        rows: batch.row_count(),
    })
}
