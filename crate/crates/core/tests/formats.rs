//! Column file container: round trips, layout arithmetic and streaming reads.

use std::io::Cursor;

use minipipe::colfmt::{
    read_column_file, write_column_file, ColumnBatch, ColumnReader, DenseColumn, FormatError,
    HexTokens, OwnedColumn, SparseColumn, SparseData, SparseKind,
};
use proptest::prelude::*;

fn arb_batch() -> impl Strategy<Value = ColumnBatch> {
    (0usize..40, 0usize..4, 0usize..4, 0u8..3, 1u8..=16).prop_flat_map(
        |(rows, dense, sparse, kind, width)| {
            let dense_cols = prop::collection::vec(
                prop::collection::vec(any::<u32>().prop_map(f32::from_bits), rows),
                dense,
            );
            let sparse_cols = match kind {
                0 => prop::collection::vec(
                    prop::collection::vec(
                        prop::sample::select(b"0123456789abcdefABCDEF".to_vec()),
                        rows * usize::from(width),
                    )
                    .prop_map(move |b| SparseData::Hex(HexTokens::new(width, b).unwrap())),
                    sparse,
                )
                .boxed(),
                1 => prop::collection::vec(
                    prop::collection::vec(any::<u64>(), rows).prop_map(SparseData::Values),
                    sparse,
                )
                .boxed(),
                _ => prop::collection::vec(
                    prop::collection::vec(any::<u32>(), rows).prop_map(SparseData::Indices),
                    sparse,
                )
                .boxed(),
            };
            let kind = match kind {
                0 => SparseKind::Hex { width },
                1 => SparseKind::Value,
                _ => SparseKind::Index,
            };
            (dense_cols, sparse_cols).prop_map(move |(d, s)| {
                let dense = d
                    .into_iter()
                    .enumerate()
                    .map(|(i, v)| DenseColumn::new(format!("dense_{i}"), v))
                    .collect();
                let sparse = s
                    .into_iter()
                    .enumerate()
                    .map(|(i, v)| SparseColumn::new(format!("sparse_{i}"), v))
                    .collect();
                ColumnBatch::with_kind(rows, kind, dense, sparse).unwrap()
            })
        },
    )
}

/// Layout arithmetic written out independently of the header helpers.
fn expected_len(b: &ColumnBatch) -> u64 {
    let sparse_width = match b.sparse_kind() {
        SparseKind::Hex { width } => u64::from(width),
        SparseKind::Value => 8,
        SparseKind::Index => 4,
    };
    let rows = b.row_count() as u64;
    24 + rows * (4 * b.dense().len() as u64 + sparse_width * b.sparse().len() as u64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn read_inverts_write(batch in arb_batch()) {
        let mut bytes = Vec::new();
        let n = write_column_file(&batch, &mut bytes).unwrap();
        prop_assert_eq!(n, bytes.len() as u64);
        prop_assert_eq!(n, expected_len(&batch));
        let back = read_column_file(Cursor::new(&bytes)).unwrap();
        prop_assert_eq!(back.to_file_bytes(), bytes);
        prop_assert_eq!(back, batch);
    }

    #[test]
    fn every_proper_prefix_is_rejected(batch in arb_batch(), cut in any::<prop::sample::Index>()) {
        let bytes = batch.to_file_bytes();
        let cut = cut.index(bytes.len());
        let err = read_column_file(Cursor::new(&bytes[..cut])).unwrap_err();
        let ok = matches!(err, FormatError::Truncated { .. } | FormatError::InvalidHeader(_));
        prop_assert!(ok, "{}", err);
    }
}

#[test]
fn reader_yields_columns_in_file_order() {
    let batch = ColumnBatch::new(
        3,
        vec![
            DenseColumn::new("dense_0", vec![1.0, -2.0, f32::NAN]),
            DenseColumn::new("dense_1", vec![0.0; 3]),
        ],
        vec![SparseColumn::hex(
            "sparse_0",
            HexTokens::from_tokens(2, &["0a", "ff", "10"]).unwrap(),
        )],
    )
    .unwrap();
    let bytes = batch.to_file_bytes();
    let mut reader = ColumnReader::open(Cursor::new(bytes)).unwrap();
    let mut names = Vec::new();
    while let Some(col) = reader.next_column() {
        names.push(match col.unwrap() {
            OwnedColumn::Dense(c) => c.name,
            OwnedColumn::Sparse(c) => c.name,
        });
    }
    assert_eq!(names, ["dense_0", "dense_1", "sparse_0"]);
}

#[test]
fn chunked_reads_respect_element_boundaries() {
    let batch = ColumnBatch::new(
        5,
        vec![DenseColumn::new("dense_0", vec![1.0, 2.0, 3.0, 4.0, 5.0])],
        vec![SparseColumn::new(
            "sparse_0",
            SparseData::Values(vec![1, 2, 3, 4, 5]),
        )],
    )
    .unwrap();
    let mut reader = ColumnReader::open(Cursor::new(batch.to_file_bytes())).unwrap();
    let mut chunks = Vec::new();
    while let Some((column, bytes)) = reader.read_chunk(2).unwrap() {
        chunks.push((column, bytes.len()));
    }
    assert_eq!(chunks, [(0, 8), (0, 8), (0, 4), (1, 16), (1, 16), (1, 8)]);
}
