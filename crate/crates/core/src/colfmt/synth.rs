//! Seeded synthetic datasets shaped like recommender click logs.
//!
//! Dense values: with probability `nan_fraction` a quiet NaN, with
//! probability `negative_fraction` the negation of an Exp(mean 100) draw,
//! otherwise a positive Exp(mean 100) draw. Sparse tokens: each column owns a
//! pool of `sparse_cardinality` distinct random values below `16^W`, and
//! every row picks one uniformly, formatted as lowercase hex.
//!
//! Every column has an independent ChaCha8 stream derived from the seed, so
//! columns can be generated lazily in any order and the result is still a
//! pure function of the [`DatasetSpec`].

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::{
    check_token_width, dense_name, sparse_name, ColumnBatch, DenseColumn, FormatError, HexTokens,
    SparseColumn, DEFAULT_TOKEN_WIDTH,
};
use crate::ops::format_hex_into;

const DENSE_MEAN: f64 = 100.0;
const SPARSE_STREAM_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub rows: usize,
    pub dense_features: usize,
    pub sparse_features: usize,
    pub seed: u64,
    pub negative_fraction: f64,
    pub nan_fraction: f64,
    pub sparse_cardinality: usize,
    pub token_width: u8,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            rows: 1000,
            dense_features: 13,
            sparse_features: 26,
            seed: 0,
            negative_fraction: 0.1,
            nan_fraction: 0.02,
            sparse_cardinality: 10_000,
            token_width: DEFAULT_TOKEN_WIDTH,
        }
    }
}

impl DatasetSpec {
    /// 13 dense + 26 sparse features (Criteo Kaggle shape).
    pub fn criteo(rows: usize, seed: u64) -> Self {
        Self {
            rows,
            seed,
            ..Self::default()
        }
    }

    /// 504 dense + 42 sparse features (wide synthetic shape).
    pub fn wide(rows: usize, seed: u64) -> Self {
        Self {
            rows,
            seed,
            dense_features: 504,
            sparse_features: 42,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), FormatError> {
        let bad = |m: String| Err(FormatError::InvalidSpec(m));
        if self.rows == 0 {
            return bad("rows must be positive".into());
        }
        if self.dense_features > usize::from(u16::MAX)
            || self.sparse_features > usize::from(u16::MAX)
        {
            return bad("at most 65535 columns per class".into());
        }
        for (name, f) in [
            ("negative_fraction", self.negative_fraction),
            ("nan_fraction", self.nan_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return bad(format!("{name} = {f} outside [0, 1]"));
            }
        }
        if self.negative_fraction + self.nan_fraction > 1.0 {
            return bad("negative_fraction + nan_fraction exceeds 1".into());
        }
        check_token_width(self.token_width).map_err(|_| {
            FormatError::InvalidSpec(format!("token width {} outside 1..=16", self.token_width))
        })?;
        if self.sparse_features > 0 {
            if self.sparse_cardinality == 0 {
                return bad("sparse_cardinality must be positive".into());
            }
            let space = token_space(self.token_width);
            if (self.sparse_cardinality as u128) > space {
                return bad(format!(
                    "sparse_cardinality {} exceeds the {space} values representable in {} hex digits",
                    self.sparse_cardinality, self.token_width
                ));
            }
        }
        Ok(())
    }
}

fn token_space(width: u8) -> u128 {
    1u128 << (4 * u32::from(width))
}

fn column_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Lazily generates one dense column.
pub struct DenseGenerator {
    rng: ChaCha8Rng,
    exp: Exp<f64>,
    nan_fraction: f64,
    negative_cut: f64,
}

impl DenseGenerator {
    pub fn new(spec: &DatasetSpec, column: usize) -> Self {
        Self {
            rng: column_rng(spec.seed, column as u64),
            exp: Exp::new(1.0 / DENSE_MEAN).expect("positive rate"),
            nan_fraction: spec.nan_fraction,
            negative_cut: spec.nan_fraction + spec.negative_fraction,
        }
    }

    pub fn next_value(&mut self) -> f32 {
        let u: f64 = self.rng.random();
        if u < self.nan_fraction {
            return f32::NAN;
        }
        let magnitude = self.exp.sample(&mut self.rng) as f32;
        if u < self.negative_cut {
            -magnitude
        } else {
            magnitude
        }
    }

    pub fn fill(&mut self, out: &mut [f32]) {
        for v in out {
            *v = self.next_value();
        }
    }
}

/// Lazily generates one sparse column of hex tokens.
pub struct SparseGenerator {
    rng: ChaCha8Rng,
    pool: Vec<u64>,
    width: u8,
}

impl SparseGenerator {
    pub fn new(spec: &DatasetSpec, column: usize) -> Self {
        let mut rng = column_rng(spec.seed, SPARSE_STREAM_BASE + column as u64);
        let space = token_space(spec.token_width);
        let mask = if space > u128::from(u64::MAX) {
            u64::MAX
        } else {
            (space - 1) as u64
        };
        let mut seen = HashSet::with_capacity(spec.sparse_cardinality);
        let mut pool = Vec::with_capacity(spec.sparse_cardinality);
        while pool.len() < spec.sparse_cardinality {
            let v = rng.random::<u64>() & mask;
            if seen.insert(v) {
                pool.push(v);
            }
        }
        Self {
            rng,
            pool,
            width: spec.token_width,
        }
    }

    /// The distinct values this column draws from.
    pub fn pool(&self) -> &[u64] {
        &self.pool
    }

    pub fn next_value(&mut self) -> u64 {
        self.pool[self.rng.random_range(0..self.pool.len())]
    }

    /// Appends `rows` tokens to `out`.
    pub fn fill_tokens(&mut self, rows: usize, out: &mut Vec<u8>) {
        let w = usize::from(self.width);
        let start = out.len();
        out.resize(start + rows * w, 0);
        for chunk in out[start..].chunks_exact_mut(w) {
            let v = self.next_value();
            format_hex_into(v, chunk);
        }
    }
}

/// Materialises a whole synthetic dataset.
pub fn generate_synthetic(spec: &DatasetSpec) -> Result<ColumnBatch, FormatError> {
    spec.validate()?;
    let dense = (0..spec.dense_features)
        .map(|i| {
            let mut values = vec![0.0; spec.rows];
            DenseGenerator::new(spec, i).fill(&mut values);
            DenseColumn::new(dense_name(i), values)
        })
        .collect();
    let mut sparse = Vec::with_capacity(spec.sparse_features);
    for i in 0..spec.sparse_features {
        let mut bytes = Vec::with_capacity(spec.rows * usize::from(spec.token_width));
        SparseGenerator::new(spec, i).fill_tokens(spec.rows, &mut bytes);
        sparse.push(SparseColumn::hex(
            sparse_name(i),
            HexTokens::new(spec.token_width, bytes)?,
        ));
    }
    ColumnBatch::with_kind(
        spec.rows,
        super::SparseKind::Hex {
            width: spec.token_width,
        },
        dense,
        sparse,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::colfmt::SparseData;

    #[test]
    fn same_seed_same_batch() {
        let spec = DatasetSpec {
            rows: 1000,
            seed: 7,
            ..DatasetSpec::default()
        };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dense().len(), 13);
        assert_eq!(a.sparse().len(), 26);

        let c = generate_synthetic(&DatasetSpec { seed: 8, ..spec }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn negative_fraction_is_respected() {
        let spec = DatasetSpec {
            rows: 10_000,
            dense_features: 4,
            sparse_features: 0,
            negative_fraction: 0.3,
            nan_fraction: 0.0,
            seed: 11,
            ..DatasetSpec::default()
        };
        let batch = generate_synthetic(&spec).unwrap();
        for col in batch.dense() {
            let neg = col.values.iter().filter(|v| **v < 0.0).count();
            let frac = neg as f64 / spec.rows as f64;
            assert!((frac - 0.3).abs() <= 0.02, "negative fraction {frac}");
        }
    }

    #[test]
    fn nan_fraction_is_respected() {
        let spec = DatasetSpec {
            rows: 10_000,
            dense_features: 2,
            sparse_features: 0,
            negative_fraction: 0.2,
            nan_fraction: 0.1,
            seed: 3,
            ..DatasetSpec::default()
        };
        let batch = generate_synthetic(&spec).unwrap();
        for col in batch.dense() {
            let nan = col.values.iter().filter(|v| v.is_nan()).count() as f64 / spec.rows as f64;
            assert!((nan - 0.1).abs() <= 0.02, "nan fraction {nan}");
        }
    }

    #[test]
    fn cardinality_bounds_distinct_tokens() {
        let spec = DatasetSpec {
            rows: 100_000,
            dense_features: 0,
            sparse_features: 3,
            sparse_cardinality: 50,
            seed: 5,
            ..DatasetSpec::default()
        };
        let batch = generate_synthetic(&spec).unwrap();
        for col in batch.sparse() {
            let SparseData::Hex(tokens) = &col.data else {
                panic!("expected hex");
            };
            let distinct: HashSet<&[u8]> = tokens.iter().collect();
            assert!(distinct.len() <= 50);
            assert!(
                distinct.len() >= 45,
                "uniform draws should hit most of the pool"
            );
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let base = DatasetSpec::default();
        for spec in [
            DatasetSpec {
                rows: 0,
                ..base.clone()
            },
            DatasetSpec {
                negative_fraction: 0.7,
                nan_fraction: 0.4,
                ..base.clone()
            },
            DatasetSpec {
                token_width: 0,
                ..base.clone()
            },
            DatasetSpec {
                token_width: 1,
                sparse_cardinality: 17,
                ..base.clone()
            },
            DatasetSpec {
                sparse_cardinality: 0,
                ..base.clone()
            },
        ] {
            assert!(
                matches!(generate_synthetic(&spec), Err(FormatError::InvalidSpec(_))),
                "{spec:?}"
            );
        }
    }

    #[test]
    fn narrow_tokens_stay_in_range() {
        let spec = DatasetSpec {
            rows: 500,
            dense_features: 0,
            sparse_features: 1,
            token_width: 1,
            sparse_cardinality: 16,
            ..DatasetSpec::default()
        };
        let batch = generate_synthetic(&spec).unwrap();
        let SparseData::Hex(tokens) = &batch.sparse()[0].data else {
            panic!("expected hex");
        };
        assert_eq!(tokens.width(), 1);
        assert!(tokens.iter().all(|t| t[0].is_ascii_hexdigit()));
    }
}
