//! Engine output against the naive oracle.

use minipipe::colfmt::{
    generate_synthetic, ColumnBatch, DenseColumn, HexTokens, SparseColumn, SparseData,
};
use minipipe::ops::OpError;
use minipipe::oracle::{oracle_run, OracleError};
use minipipe::pipeline::{compile_spec, MiniPipeSlot, PipelineError};
use minipipe::transport::{BatchSink, MemorySource, TransportError};
use minipipe::DatasetSpec;
use proptest::prelude::*;

fn engine_run(
    spec: &str,
    batch: &ColumnBatch,
) -> Result<(ColumnBatch, Vec<Vec<u64>>), PipelineError> {
    let slot = MiniPipeSlot::standalone(0, compile_spec(spec).unwrap());
    let mut sink = BatchSink::new();
    // Small frames exercise the re-chunking paths.
    let mut source = MemorySource::from_batch(batch).with_max_payload(256);
    slot.run(&mut source, &mut sink)?;
    let tables = slot.tables().iter().map(|t| t.keys().to_vec()).collect();
    Ok((
        sink.into_batch().map_err(TransportError::from).unwrap(),
        tables,
    ))
}

fn assert_equivalent(spec: &str, batch: &ColumnBatch) {
    let expected = oracle_run(batch, &compile_spec(spec).unwrap()).unwrap();
    let (got, tables) = engine_run(spec, batch).unwrap();
    assert_eq!(
        got.to_file_bytes(),
        expected.to_batch().unwrap().to_file_bytes(),
        "{spec}"
    );
    assert_eq!(tables, expected.tables, "{spec}");
}

#[test]
fn presets_match_oracle_on_criteo_shape() {
    for seed in 0..3 {
        let batch = generate_synthetic(&DatasetSpec::criteo(3000, seed)).unwrap();
        for preset in ["P-I", "P-II", "P-III"] {
            assert_equivalent(preset, &batch);
        }
    }
}

#[test]
fn custom_chains_match_oracle() {
    let batch = generate_synthetic(&DatasetSpec {
        rows: 777,
        dense_features: 3,
        sparse_features: 4,
        seed: 11,
        sparse_cardinality: 50,
        ..DatasetSpec::default()
    })
    .unwrap();
    for spec in [
        "dense=neg2zero; sparse=hex2int",
        "dense=neg2zero",
        "sparse=hex2int,modulus; modulus=1000",
        "sparse=hex2int,modulus,vocab_gen,vocab_map; modulus=64",
        "dense=neg2zero,logarithm; sparse=hex2int,vocab_gen,vocab_map; modulus=4294967296",
    ] {
        assert_equivalent(spec, &batch);
    }
}

#[test]
fn invalid_hex_in_a_file_is_attributed_to_column_and_row() {
    let batch = ColumnBatch::new(
        4,
        vec![DenseColumn::new("dense_0", vec![1.0, 2.0, 3.0, 4.0])],
        vec![SparseColumn::hex(
            "sparse_0",
            HexTokens::new(4, b"00ff0a1b00aa0001".to_vec()).unwrap(),
        )],
    )
    .unwrap();
    let mut bytes = batch.to_file_bytes();
    // Third token of the sparse column: header, 16 dense bytes, two tokens.
    let at = 24 + 16 + 2 * 4 + 2;
    bytes[at] = b'z';
    let slot = MiniPipeSlot::standalone(0, compile_spec("P-I").unwrap());
    let mut source = MemorySource::new(bytes.into()).unwrap();
    let err = slot.run(&mut source, &mut BatchSink::new()).unwrap_err();
    match err {
        PipelineError::Operator {
            column: 1,
            source:
                OpError::InvalidHex {
                    row: 2,
                    position: 2,
                    byte: b'z',
                },
        } => {}
        other => panic!("unexpected error: {other}"),
    }
}

#[test]
fn domain_errors_are_attributed_identically() {
    let batch = ColumnBatch::new(
        3,
        vec![
            DenseColumn::new("dense_0", vec![0.5, 1.5, 2.5]),
            DenseColumn::new("dense_1", vec![0.5, 4.0, -2.5]),
        ],
        vec![],
    )
    .unwrap();
    let spec = "dense=logarithm";
    let oracle = oracle_run(&batch, &compile_spec(spec).unwrap()).unwrap_err();
    let engine = engine_run(spec, &batch).unwrap_err();
    let OracleError::Operator {
        column: oc,
        source: os,
    } = oracle
    else {
        panic!("oracle: {oracle}");
    };
    let PipelineError::Operator {
        column: ec,
        source: es,
    } = engine
    else {
        panic!("engine: {engine}");
    };
    assert_eq!((oc, &os), (ec, &es));
    assert_eq!((oc, os.row()), (1, Some(2)));
}

#[test]
fn logarithm_without_clipping_fails_on_negative_rows() {
    let batch = ColumnBatch::new(
        3,
        vec![
            DenseColumn::new("dense_0", vec![0.5, 1.5, 2.5]),
            DenseColumn::new("dense_1", vec![0.5, f32::NAN, -2.5]),
        ],
        vec![],
    )
    .unwrap();
    let err = engine_run("dense=logarithm", &batch).unwrap_err();
    assert!(
        matches!(err, PipelineError::Operator { column: 1, ref source } if source.row() == Some(1)),
        "{err}"
    );
}

#[test]
fn zero_rows_produce_header_only_output() {
    let batch = ColumnBatch::new(
        0,
        vec![DenseColumn::new("dense_0", vec![])],
        vec![SparseColumn::hex(
            "sparse_0",
            HexTokens::new(8, vec![]).unwrap(),
        )],
    )
    .unwrap();
    for preset in ["P-I", "P-II", "P-III"] {
        assert_equivalent(preset, &batch);
    }
}

fn small_batch() -> impl Strategy<Value = ColumnBatch> {
    (
        1usize..300,
        0usize..4,
        0usize..4,
        any::<u64>(),
        1usize..200,
        0.0f64..0.5,
        0.0f64..0.3,
    )
        .prop_map(|(rows, dense, sparse, seed, card, neg, nan)| {
            generate_synthetic(&DatasetSpec {
                rows,
                dense_features: dense,
                sparse_features: sparse.max(usize::from(dense == 0)),
                seed,
                negative_fraction: neg,
                nan_fraction: nan,
                sparse_cardinality: card,
                token_width: 8,
            })
            .unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn engine_equals_oracle(batch in small_batch(), preset in prop::sample::select(vec!["P-I", "P-II", "P-III"])) {
        let expected = oracle_run(&batch, &compile_spec(preset).unwrap()).unwrap();
        let (got, tables) = engine_run(preset, &batch).unwrap();
        prop_assert_eq!(got.to_file_bytes(), expected.to_batch().unwrap().to_file_bytes(), "{}", preset);
        prop_assert_eq!(tables, expected.tables);
    }

    #[test]
    fn stateful_indices_are_dense_first_occurrence(batch in small_batch(), m in 1u64..64) {
        let spec = format!("sparse=hex2int,modulus,vocab_gen,vocab_map; modulus={m}");
        let (got, tables) = engine_run(&spec, &batch).unwrap();
        for (col, table) in got.sparse().iter().zip(&tables) {
            prop_assert!(table.len() as u64 <= m);
            let SparseData::Indices(idx) = &col.data else { panic!("expected indices") };
            let mut next = 0u32;
            for &i in idx {
                prop_assert!(i <= next);
                if i == next {
                    next += 1;
                }
            }
            prop_assert_eq!(next as usize, table.len());
        }
    }
}
