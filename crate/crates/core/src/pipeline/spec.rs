use std::fmt;

use crate::colfmt::SparseKind;
use crate::ops::{Modulus, TokenWidth, LARGE_VOCAB, SMALL_VOCAB};

use super::PipelineError;

pub const PRESETS: [&str; 3] = ["P-I", "P-II", "P-III"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DenseOp {
    Neg2Zero,
    Logarithm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SparseOp {
    Hex2Int,
    Modulus,
    VocabGen,
    VocabMap,
}

impl DenseOp {
    pub fn name(self) -> &'static str {
        match self {
            DenseOp::Neg2Zero => "neg2zero",
            DenseOp::Logarithm => "logarithm",
        }
    }
}

impl SparseOp {
    pub fn name(self) -> &'static str {
        match self {
            SparseOp::Hex2Int => "hex2int",
            SparseOp::Modulus => "modulus",
            SparseOp::VocabGen => "vocab_gen",
            SparseOp::VocabMap => "vocab_map",
        }
    }

    fn needs_modulus(self) -> bool {
        !matches!(self, SparseOp::Hex2Int)
    }
}

impl fmt::Display for DenseOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for SparseOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct OperatorParams {
    /// Range `M` shared by `modulus` and the vocabulary ops.
    pub modulus: Option<Modulus>,
    /// Expected hex token width; `None` accepts whatever the input declares.
    pub token_width: Option<TokenWidth>,
}

/// A validated operator chain for dense and sparse columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineSpec {
    id: String,
    dense_chain: Vec<DenseOp>,
    sparse_chain: Vec<SparseOp>,
    params: OperatorParams,
    stateful: bool,
}

impl PipelineSpec {
    pub fn new(
        id: impl Into<String>,
        dense_chain: Vec<DenseOp>,
        sparse_chain: Vec<SparseOp>,
        params: OperatorParams,
    ) -> Result<Self, PipelineError> {
        let id = id.into();
        if id.is_empty()
            || id
                .chars()
                .any(|c| c.is_whitespace() || c == ';' || c == '=')
        {
            return Err(PipelineError::InvalidSpec(format!(
                "invalid pipeline id {id:?}"
            )));
        }
        for pair in sparse_chain.windows(2) {
            if pair[0] >= pair[1] {
                return Err(PipelineError::MisorderedChain(format!(
                    "{} cannot follow {} (order is hex2int, modulus, vocab_gen, vocab_map)",
                    pair[1], pair[0]
                )));
            }
        }
        let has_gen = sparse_chain.contains(&SparseOp::VocabGen);
        let has_map = sparse_chain.contains(&SparseOp::VocabMap);
        if has_map && !has_gen {
            return Err(PipelineError::MisorderedChain(
                "vocab_map requires a preceding vocab_gen".into(),
            ));
        }
        if has_gen && !has_map {
            return Err(PipelineError::MisorderedChain(
                "vocab_gen must be followed by vocab_map".into(),
            ));
        }
        if let Some(op) = sparse_chain.iter().find(|op| op.needs_modulus()) {
            if params.modulus.is_none() {
                return Err(PipelineError::MissingModulus(op.name()));
            }
        }
        Ok(Self {
            id,
            dense_chain,
            sparse_chain,
            params,
            stateful: has_gen,
        })
    }

    /// Built-in presets: `P-I` (stateless), `P-II` (vocabulary over 8K),
    /// `P-III` (vocabulary over 512K).
    pub fn preset(name: &str) -> Option<Self> {
        let (modulus, vocab) = match name {
            "P-I" => (SMALL_VOCAB, false),
            "P-II" => (SMALL_VOCAB, true),
            "P-III" => (LARGE_VOCAB, true),
            _ => return None,
        };
        let mut sparse = vec![SparseOp::Hex2Int, SparseOp::Modulus];
        if vocab {
            sparse.extend([SparseOp::VocabGen, SparseOp::VocabMap]);
        }
        let params = OperatorParams {
            modulus: Some(Modulus::new(modulus).expect("nonzero")),
            token_width: None,
        };
        Some(
            Self::new(
                name,
                vec![DenseOp::Neg2Zero, DenseOp::Logarithm],
                sparse,
                params,
            )
            .expect("presets are valid"),
        )
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dense_chain(&self) -> &[DenseOp] {
        &self.dense_chain
    }

    pub fn sparse_chain(&self) -> &[SparseOp] {
        &self.sparse_chain
    }

    pub fn params(&self) -> &OperatorParams {
        &self.params
    }

    pub fn is_stateful(&self) -> bool {
        self.stateful
    }

    pub fn modulus(&self) -> Option<Modulus> {
        self.params.modulus
    }

    /// Kind of the sparse output for a given sparse input kind.
    pub fn output_kind(&self, input: SparseKind) -> Result<SparseKind, PipelineError> {
        let Some(first) = self.sparse_chain.first() else {
            return Ok(input);
        };
        match (first, input) {
            (SparseOp::Hex2Int, SparseKind::Hex { width }) => {
                if let Some(w) = self.params.token_width {
                    if w.get() != width {
                        return Err(PipelineError::SchemaMismatch(format!(
                            "pipeline {} expects {}-character tokens, input has {width}",
                            self.id,
                            w.get()
                        )));
                    }
                }
            }
            (SparseOp::Hex2Int, other) => {
                return Err(PipelineError::SchemaMismatch(format!(
                    "hex2int needs hex token input, got {other}"
                )))
            }
            (_, SparseKind::Value) => {}
            (op, other) => {
                return Err(PipelineError::SchemaMismatch(format!(
                    "{op} needs u64 input, got {other}"
                )))
            }
        }
        Ok(if self.stateful {
            SparseKind::Index
        } else {
            SparseKind::Value
        })
    }

    /// Canonical text form; `compile_spec(&s.to_description())` yields `s`.
    pub fn to_description(&self) -> String {
        let join = |names: Vec<&str>| names.join(",");
        let mut out = format!(
            "id={}\ndense={}\nsparse={}\n",
            self.id,
            join(self.dense_chain.iter().map(|o| o.name()).collect()),
            join(self.sparse_chain.iter().map(|o| o.name()).collect()),
        );
        if let Some(m) = self.params.modulus {
            out.push_str(&format!("modulus={}\n", m.get()));
        }
        if let Some(w) = self.params.token_width {
            out.push_str(&format!("token_width={}\n", w.get()));
        }
        out
    }
}

impl fmt::Display for PipelineSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dense: Vec<&str> = self.dense_chain.iter().map(|o| o.name()).collect();
        let sparse: Vec<&str> = self.sparse_chain.iter().map(|o| o.name()).collect();
        write!(
            f,
            "{} [dense: {}; sparse: {}",
            self.id,
            dense.join(" > "),
            sparse.join(" > ")
        )?;
        if let Some(m) = self.params.modulus {
            write!(f, "; M={}", m.get())?;
        }
        f.write_str("]")
    }
}

/// Compiles a preset name or a `key=value` description.
///
/// ```text
/// id=custom
/// dense=neg2zero,logarithm
/// sparse=hex2int,modulus,vocab_gen,vocab_map
/// modulus=8K
/// token_width=8
/// ```
///
/// Entries are separated by newlines or `;`; `#` starts a comment. A
/// description may also start from a preset with `preset=P-II` and override
/// individual keys.
pub fn compile_spec(description: &str) -> Result<PipelineSpec, PipelineError> {
    let trimmed = description.trim();
    if let Some(spec) = PipelineSpec::preset(trimmed) {
        return Ok(spec);
    }
    if !trimmed.contains('=') {
        return Err(PipelineError::UnknownPreset(trimmed.to_string()));
    }

    let mut id = None;
    let mut dense = None;
    let mut sparse = None;
    let mut params = OperatorParams::default();
    for entry in trimmed.split(['\n', ';']) {
        let entry = entry.split('#').next().unwrap_or("").trim();
        if entry.is_empty() {
            continue;
        }
        let (key, value) = entry.split_once('=').ok_or_else(|| {
            PipelineError::InvalidSpec(format!("expected key=value, got {entry:?}"))
        })?;
        let value = value.trim();
        match key.trim() {
            "preset" => {
                let base = PipelineSpec::preset(value)
                    .ok_or_else(|| PipelineError::UnknownPreset(value.to_string()))?;
                id.get_or_insert_with(|| base.id.clone());
                dense.get_or_insert_with(|| base.dense_chain.clone());
                sparse.get_or_insert_with(|| base.sparse_chain.clone());
                params.modulus = params.modulus.or(base.params.modulus);
            }
            "id" => id = Some(value.to_string()),
            "dense" => dense = Some(parse_list(value, parse_dense)?),
            "sparse" => sparse = Some(parse_list(value, parse_sparse)?),
            "modulus" => {
                let m = parse_count(value)?;
                params.modulus =
                    Some(Modulus::new(m).map_err(|e| PipelineError::InvalidSpec(e.to_string()))?);
            }
            "token_width" => {
                let w = parse_count(value)?;
                params.token_width = Some(
                    TokenWidth::new(w as usize)
                        .map_err(|e| PipelineError::InvalidSpec(e.to_string()))?,
                );
            }
            other => return Err(PipelineError::InvalidSpec(format!("unknown key {other:?}"))),
        }
    }
    PipelineSpec::new(
        id.unwrap_or_else(|| "custom".into()),
        dense.unwrap_or_default(),
        sparse.unwrap_or_default(),
        params,
    )
}

fn parse_list<T>(
    value: &str,
    parse: fn(&str) -> Result<T, PipelineError>,
) -> Result<Vec<T>, PipelineError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(parse)
        .collect()
}

fn parse_dense(name: &str) -> Result<DenseOp, PipelineError> {
    match name.to_ascii_lowercase().as_str() {
        "neg2zero" => Ok(DenseOp::Neg2Zero),
        "logarithm" | "log" => Ok(DenseOp::Logarithm),
        _ if parse_sparse(name).is_ok() => Err(PipelineError::MisorderedChain(format!(
            "{name} is a sparse operator and cannot run on dense columns"
        ))),
        _ => Err(PipelineError::UnknownOperator(name.to_string())),
    }
}

fn parse_sparse(name: &str) -> Result<SparseOp, PipelineError> {
    match name.to_ascii_lowercase().as_str() {
        "hex2int" => Ok(SparseOp::Hex2Int),
        "modulus" | "mod" => Ok(SparseOp::Modulus),
        "vocab_gen" | "vocabgen" => Ok(SparseOp::VocabGen),
        "vocab_map" | "vocabmap" => Ok(SparseOp::VocabMap),
        "neg2zero" | "logarithm" | "log" => Err(PipelineError::MisorderedChain(format!(
            "{name} is a dense operator and cannot run on sparse columns"
        ))),
        _ => Err(PipelineError::UnknownOperator(name.to_string())),
    }
}

/// Decimal count with an optional binary `K` or `M` suffix.
fn parse_count(value: &str) -> Result<u64, PipelineError> {
    let bad = || PipelineError::InvalidSpec(format!("invalid count {value:?}"));
    let v = value.trim();
    let (digits, scale) = match v.as_bytes().last() {
        Some(b'K' | b'k') => (&v[..v.len() - 1], 1u64 << 10),
        Some(b'M' | b'm') => (&v[..v.len() - 1], 1u64 << 20),
        _ => (v, 1),
    };
    digits
        .parse::<u64>()
        .map_err(|_| bad())?
        .checked_mul(scale)
        .ok_or_else(bad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn presets_match_the_published_dataflows() {
        let p1 = compile_spec("P-I").unwrap();
        assert!(!p1.is_stateful());
        assert_eq!(p1.dense_chain(), &[DenseOp::Neg2Zero, DenseOp::Logarithm]);
        assert_eq!(p1.sparse_chain(), &[SparseOp::Hex2Int, SparseOp::Modulus]);

        let p2 = compile_spec("P-II").unwrap();
        assert!(p2.is_stateful());
        assert_eq!(p2.modulus().unwrap().get(), 8192);
        assert_eq!(p2.sparse_chain().len(), 4);

        let p3 = compile_spec(" P-III\n").unwrap();
        assert!(p3.is_stateful());
        assert_eq!(p3.modulus().unwrap().get(), 524_288);
    }

    #[test]
    fn vocab_map_before_vocab_gen_is_misordered() {
        let err =
            compile_spec("sparse=hex2int,modulus,vocab_map,vocab_gen; modulus=8K").unwrap_err();
        assert!(matches!(err, PipelineError::MisorderedChain(_)), "{err}");
        let err = compile_spec("sparse=modulus,hex2int; modulus=8").unwrap_err();
        assert!(matches!(err, PipelineError::MisorderedChain(_)));
        let err = compile_spec("dense=hex2int").unwrap_err();
        assert!(matches!(err, PipelineError::MisorderedChain(_)));
    }

    #[test]
    fn vocab_ops_need_a_modulus() {
        let err = compile_spec("sparse=hex2int,vocab_gen,vocab_map").unwrap_err();
        assert!(
            matches!(err, PipelineError::MissingModulus("vocab_gen")),
            "{err}"
        );
        let err = compile_spec("sparse=hex2int,modulus").unwrap_err();
        assert!(matches!(err, PipelineError::MissingModulus("modulus")));
    }

    #[test]
    fn unpaired_vocab_ops_are_rejected() {
        assert!(compile_spec("sparse=hex2int,modulus,vocab_gen; modulus=8").is_err());
        assert!(compile_spec("sparse=hex2int,modulus,vocab_map; modulus=8").is_err());
    }

    #[test]
    fn unknown_names_are_reported() {
        assert!(matches!(compile_spec("P-9"), Err(PipelineError::UnknownPreset(p)) if p == "P-9"));
        assert!(matches!(
            compile_spec("dense=neg2zero,sqrt"),
            Err(PipelineError::UnknownOperator(o)) if o == "sqrt"
        ));
        assert!(matches!(
            compile_spec("colour=blue"),
            Err(PipelineError::InvalidSpec(_))
        ));
    }

    #[test]
    fn suffixes_and_overrides() {
        let s = compile_spec("preset=P-II\nid=mine\nmodulus=512K # bigger table\ntoken_width=16")
            .unwrap();
        assert_eq!(s.id(), "mine");
        assert_eq!(s.modulus().unwrap().get(), 524_288);
        assert_eq!(s.params().token_width.unwrap().get(), 16);
        assert!(s.is_stateful());
        assert_eq!(parse_count("3M").unwrap(), 3 << 20);
        assert!(parse_count("K").is_err());
    }

    #[test]
    fn output_kind_follows_chain() {
        let hex = SparseKind::Hex { width: 8 };
        assert_eq!(
            compile_spec("P-I").unwrap().output_kind(hex).unwrap(),
            SparseKind::Value
        );
        assert_eq!(
            compile_spec("P-II").unwrap().output_kind(hex).unwrap(),
            SparseKind::Index
        );
        assert!(compile_spec("P-I")
            .unwrap()
            .output_kind(SparseKind::Value)
            .is_err());
        let s = compile_spec("sparse=modulus,vocab_gen,vocab_map; modulus=64").unwrap();
        assert_eq!(s.output_kind(SparseKind::Value).unwrap(), SparseKind::Index);
        assert!(s.output_kind(hex).is_err());
        let pass = compile_spec("dense=neg2zero").unwrap();
        assert_eq!(
            pass.output_kind(SparseKind::Index).unwrap(),
            SparseKind::Index
        );
        let strict = compile_spec("preset=P-I; token_width=16").unwrap();
        assert!(strict.output_kind(hex).is_err());
    }

    fn arb_spec() -> impl Strategy<Value = PipelineSpec> {
        let dense = prop::collection::vec(
            prop_oneof![Just(DenseOp::Neg2Zero), Just(DenseOp::Logarithm)],
            0..4,
        );
        let sparse = (any::<bool>(), any::<bool>(), any::<bool>());
        let modulus = prop::option::of(1u64..1 << 30);
        let width = prop::option::of(1usize..=16);
        (dense, sparse, modulus, width, "[a-z][a-z0-9_-]{0,8}").prop_filter_map(
            "invalid combination",
            |(dense, (hex, m, vocab), modulus, width, id)| {
                let mut sparse = Vec::new();
                if hex {
                    sparse.push(SparseOp::Hex2Int);
                }
                if m {
                    sparse.push(SparseOp::Modulus);
                }
                if vocab {
                    sparse.extend([SparseOp::VocabGen, SparseOp::VocabMap]);
                }
                let params = OperatorParams {
                    modulus: modulus.map(|m| Modulus::new(m).unwrap()),
                    token_width: width.map(|w| TokenWidth::new(w).unwrap()),
                };
                PipelineSpec::new(id, dense, sparse, params).ok()
            },
        )
    }

    proptest! {
        #[test]
        fn description_round_trips(spec in arb_spec()) {
            let again = compile_spec(&spec.to_description()).unwrap();
            prop_assert_eq!(&again, &spec);
        }

        #[test]
        fn stateful_flag_matches_chain(spec in arb_spec()) {
            prop_assert_eq!(spec.is_stateful(), spec.sparse_chain().contains(&SparseOp::VocabGen));
        }
    }
}
