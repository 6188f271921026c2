//! Scaling and per-operator benchmarks.
//!
//! Every measurement runs warm-up iterations that are discarded, then at
//! least five timed trials whose mean and standard deviation are reported.
//! Reports serialise as one JSON object per line.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::colfmt::{generate_synthetic, ColumnBatch, DatasetSpec, FormatError, SparseData};
use crate::ops::{
    hex2int_column, logarithm_in_place, modulus_in_place, neg2zero_in_place, Modulus, OpError,
    TokenWidth, UnknownPolicy, VocabTable, LARGE_VOCAB, SMALL_VOCAB,
};
use crate::pipeline::{Engine, EngineConfig, Job, PipelineError, PipelineSpec};
use crate::transport::{mean_std, MemorySource, NullSink, TransportError};

pub const MIN_TRIALS: usize = 5;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Operator(#[from] OpError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad report line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid benchmark setup: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchOptions {
    pub trials: usize,
    pub warmups: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            trials: MIN_TRIALS,
            warmups: 2,
        }
    }
}

impl BenchOptions {
    fn validate(&self) -> Result<(), BenchError> {
        if self.trials < MIN_TRIALS {
            return Err(BenchError::Invalid(format!(
                "at least {MIN_TRIALS} trials are required, got {}",
                self.trials
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub label: String,
    pub pipeline: String,
    pub slots: usize,
    /// Rows processed per trial, over all slots.
    pub rows: u64,
    /// Input payload bytes per trial, over all slots.
    pub bytes: u64,
    pub wall_seconds: f64,
    pub wall_seconds_std: f64,
    pub bytes_per_sec: f64,
    pub bytes_per_sec_std: f64,
    pub bytes_per_sec_median: f64,
    pub rows_per_sec: f64,
    /// Mean throughput of each slot, in slot order.
    pub per_slot_bytes_per_sec: Vec<f64>,
    pub trial_bytes_per_sec: Vec<f64>,
    pub trials: usize,
    pub warmups: usize,
    pub host_cores: usize,
}

pub fn host_cores() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

struct Trial {
    wall: Duration,
    per_slot: Vec<f64>,
}

fn summarise(
    label: String,
    pipeline: String,
    slots: usize,
    rows: u64,
    bytes: u64,
    opts: &BenchOptions,
    trials: &[Trial],
) -> BenchReport {
    let walls: Vec<f64> = trials.iter().map(|t| t.wall.as_secs_f64()).collect();
    let rates: Vec<f64> = walls
        .iter()
        .map(|w| if *w > 0.0 { bytes as f64 / w } else { 0.0 })
        .collect();
    let (wall_mean, wall_std) = mean_std(&walls);
    let (rate_mean, rate_std) = mean_std(&rates);
    let per_slot = (0..slots)
        .map(|s| {
            trials
                .iter()
                .map(|t| t.per_slot.get(s).copied().unwrap_or(0.0))
                .sum::<f64>()
                / trials.len() as f64
        })
        .collect();
    let row_rates: Vec<f64> = walls
        .iter()
        .map(|w| if *w > 0.0 { rows as f64 / w } else { 0.0 })
        .collect();
    BenchReport {
        label,
        pipeline,
        slots,
        rows,
        bytes,
        wall_seconds: wall_mean,
        wall_seconds_std: wall_std,
        bytes_per_sec: rate_mean,
        bytes_per_sec_std: rate_std,
        bytes_per_sec_median: median(&rates),
        rows_per_sec: mean_std(&row_rates).0,
        per_slot_bytes_per_sec: per_slot,
        trial_bytes_per_sec: rates,
        trials: trials.len(),
        warmups: opts.warmups,
        host_cores: host_cores(),
    }
}

/// For each slot count `k`, runs `k` identical independent jobs of `spec`
/// over the dataset at once and reports aggregate throughput.
pub fn bench_pipeline(
    spec: &PipelineSpec,
    dataset: &DatasetSpec,
    slot_counts: &[usize],
    opts: &BenchOptions,
) -> Result<Vec<BenchReport>, BenchError> {
    opts.validate()?;
    if slot_counts.is_empty() || slot_counts.contains(&0) {
        return Err(BenchError::Invalid(
            "slot counts must be non-empty and at least 1".into(),
        ));
    }
    let batch = generate_synthetic(dataset)?;
    bench_pipeline_on(spec, &batch, slot_counts, opts)
}

/// [`bench_pipeline`] over an existing batch.
pub fn bench_pipeline_on(
    spec: &PipelineSpec,
    batch: &ColumnBatch,
    slot_counts: &[usize],
    opts: &BenchOptions,
) -> Result<Vec<BenchReport>, BenchError> {
    opts.validate()?;
    let max_slots = slot_counts.iter().copied().max().unwrap_or(1);
    let engine = Engine::new(EngineConfig::with_slots(max_slots.max(1)))?;
    for slot in 0..engine.slot_count() {
        engine.reconfigure(slot, spec.clone())?;
    }
    let image: Arc<[u8]> = batch.to_file_bytes().into();
    let header = batch.header();

    let mut reports = Vec::new();
    for &k in slot_counts {
        let run_once = || -> Result<Trial, BenchError> {
            let mut jobs = Vec::with_capacity(k);
            for slot in 0..k {
                jobs.push(Job::new(
                    slot,
                    MemorySource::new(image.clone())?,
                    NullSink::new(),
                ));
            }
            let start = Instant::now();
            let run = engine.run_concurrent(jobs)?;
            let wall = start.elapsed();
            for r in run.jobs {
                r?;
            }
            let mut per_slot = vec![0.0; k];
            for j in &run.report.per_job {
                per_slot[j.slot] = j.bytes_per_sec;
            }
            Ok(Trial { wall, per_slot })
        };
        for _ in 0..opts.warmups {
            run_once()?;
        }
        let trials = (0..opts.trials)
            .map(|_| run_once())
            .collect::<Result<Vec<_>, _>>()?;
        reports.push(summarise(
            format!("{} x{k}", spec.id()),
            spec.id().to_string(),
            k,
            header.row_count * k as u64,
            header.payload_len() * k as u64,
            opts,
            &trials,
        ));
    }
    Ok(reports)
}

/// Row labels of the per-operator report, in order.
pub const OPERATOR_ROWS: [&str; 8] = [
    "Neg2Zero",
    "Logarithm",
    "Hex2Int",
    "Modulus",
    "VocabGen-8K",
    "VocabMap-8K",
    "VocabGen-512K",
    "VocabMap-512K",
];

/// Single-slot time of each operator over all applicable columns of the
/// dataset. Each operator gets the input it would see inside a pipeline.
pub fn bench_operators(
    dataset: &DatasetSpec,
    opts: &BenchOptions,
) -> Result<Vec<BenchReport>, BenchError> {
    opts.validate()?;
    let batch = generate_synthetic(dataset)?;
    let rows = batch.row_count() as u64;

    let dense: Vec<Vec<f32>> = batch.dense().iter().map(|c| c.values.clone()).collect();
    let mut clipped = dense.clone();
    clipped.iter_mut().for_each(|c| neg2zero_in_place(c));
    let mut tokens = Vec::new();
    for col in batch.sparse() {
        match &col.data {
            SparseData::Hex(t) => tokens.push(t.clone()),
            _ => {
                return Err(BenchError::Invalid(
                    "operator benchmark needs hex token input".into(),
                ))
            }
        }
    }
    let width = TokenWidth::new(usize::from(dataset.token_width))?;
    let mut parsed = Vec::new();
    for t in &tokens {
        let mut out = Vec::new();
        hex2int_column(t.as_bytes(), width, 0, &mut out)?;
        parsed.push(out);
    }
    let reduce = |m: Modulus| -> Vec<Vec<u64>> {
        parsed
            .iter()
            .map(|c| {
                let mut c = c.clone();
                modulus_in_place(&mut c, m);
                c
            })
            .collect()
    };
    let small = Modulus::new(SMALL_VOCAB)?;
    let large = Modulus::new(LARGE_VOCAB)?;
    let reduced_small = reduce(small);
    let reduced_large = reduce(large);
    let build = |cols: &[Vec<u64>], m: Modulus| -> Result<Vec<VocabTable>, OpError> {
        cols.iter()
            .map(|c| {
                let mut t = VocabTable::new(m);
                t.observe(c, 0)?;
                Ok(t)
            })
            .collect()
    };
    let tables_small = build(&reduced_small, small)?;
    let tables_large = build(&reduced_large, large)?;

    let dense_bytes = rows * 4 * dense.len() as u64;
    let token_bytes = rows * u64::from(dataset.token_width) * tokens.len() as u64;
    let value_bytes = rows * 8 * parsed.len() as u64;

    let mut reports = Vec::new();
    for label in OPERATOR_ROWS {
        // Returns the time spent in the operator only; input copies are
        // made before the clock starts.
        let time_once = || -> Result<Duration, BenchError> {
            Ok(match label {
                "Neg2Zero" => {
                    let mut data = dense.clone();
                    let t = Instant::now();
                    data.iter_mut().for_each(|c| neg2zero_in_place(c));
                    t.elapsed()
                }
                "Logarithm" => {
                    let mut data = clipped.clone();
                    let t = Instant::now();
                    for c in data.iter_mut() {
                        logarithm_in_place(c, 0)?;
                    }
                    t.elapsed()
                }
                "Hex2Int" => {
                    let mut outs: Vec<Vec<u64>> =
                        tokens.iter().map(|t| Vec::with_capacity(t.len())).collect();
                    let t = Instant::now();
                    for (tok, out) in tokens.iter().zip(outs.iter_mut()) {
                        hex2int_column(tok.as_bytes(), width, 0, out)?;
                    }
                    t.elapsed()
                }
                "Modulus" => {
                    let mut data = parsed.clone();
                    let t = Instant::now();
                    data.iter_mut().for_each(|c| modulus_in_place(c, small));
                    t.elapsed()
                }
                "VocabGen-8K" | "VocabGen-512K" => {
                    let (cols, m) = if label.ends_with("8K") {
                        (&reduced_small, small)
                    } else {
                        (&reduced_large, large)
                    };
                    let t = Instant::now();
                    let tables = build(cols, m)?;
                    let elapsed = t.elapsed();
                    drop(tables);
                    elapsed
                }
                _ => {
                    let (cols, tables) = if label.ends_with("8K") {
                        (&reduced_small, &tables_small)
                    } else {
                        (&reduced_large, &tables_large)
                    };
                    let mut outs: Vec<Vec<u32>> =
                        cols.iter().map(|c| Vec::with_capacity(c.len())).collect();
                    let t = Instant::now();
                    for ((c, table), out) in cols.iter().zip(tables).zip(outs.iter_mut()) {
                        table.map_into(c, 0, UnknownPolicy::Strict, out)?;
                    }
                    t.elapsed()
                }
            })
        };
        for _ in 0..opts.warmups {
            time_once()?;
        }
        let trials = (0..opts.trials)
            .map(|_| {
                time_once().map(|wall| Trial {
                    wall,
                    per_slot: Vec::new(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let bytes = match label {
            "Neg2Zero" | "Logarithm" => dense_bytes,
            "Hex2Int" => token_bytes,
            _ => value_bytes,
        };
        let mut report = summarise(
            label.to_string(),
            label.to_string(),
            1,
            rows,
            bytes,
            opts,
            &trials,
        );
        report.per_slot_bytes_per_sec = vec![report.bytes_per_sec];
        reports.push(report);
    }
    Ok(reports)
}

pub fn write_reports<W: Write>(mut out: W, reports: &[BenchReport]) -> Result<(), BenchError> {
    for r in reports {
        serde_json::to_writer(&mut out, r)
            .map_err(|source| BenchError::Json { line: 0, source })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_reports<R: BufRead>(input: R) -> Result<Vec<BenchReport>, BenchError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|source| BenchError::Json {
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(out)
}

/// Human-readable table of `reports`.
pub fn render_table(reports: &[BenchReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<16} {:>5} {:>12} {:>12} {:>10} {:>12} {:>10} {:>6}",
        "config", "slots", "rows", "wall s", "+/- s", "MB/s", "+/- MB/s", "trials"
    );
    for r in reports {
        let _ = writeln!(
            s,
            "{:<16} {:>5} {:>12} {:>12.4} {:>10.4} {:>12.1} {:>10.1} {:>6}",
            r.label,
            r.slots,
            r.rows,
            r.wall_seconds,
            r.wall_seconds_std,
            r.bytes_per_sec / 1e6,
            r.bytes_per_sec_std / 1e6,
            r.trials
        );
    }
    if let Some(r) = reports.first() {
        let _ = writeln!(
            s,
            "host cores: {}, warm-ups per config: {}",
            r.host_cores, r.warmups
        );
    }
    s
}
