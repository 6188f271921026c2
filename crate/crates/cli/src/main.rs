//! `minipipe` command-line tool.
//!
//! Exit codes: 0 on success, 1 on usage errors (bad flags, unknown
//! pipelines), 2 when the work itself fails.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use minipipe::bench::{bench_operators, bench_pipeline, render_table, write_reports, BenchOptions};
use minipipe::colfmt::{generate_synthetic, write_column_file};
use minipipe::pipeline::PipelineError;
use minipipe::service::serve;
use minipipe::transport::{FileSink, FileSource};
use minipipe::{compile_spec, DatasetSpec, Engine, EngineConfig, PipelineSpec};

#[derive(Debug, Parser)]
#[command(
    name = "minipipe",
    version,
    about = "Streaming columnar preprocessing for recommender features"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a seeded synthetic column file.
    Gen(GenArgs),
    /// Run a pipeline over a column file.
    Run(RunArgs),
    /// Serve preprocessing sessions over TCP.
    Serve(ServeArgs),
    /// Benchmark pipelines or single operators.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
struct DatasetArgs {
    #[arg(long, default_value_t = 1000)]
    rows: usize,
    /// Dense feature count.
    #[arg(long, default_value_t = 13)]
    dense: usize,
    /// Sparse feature count.
    #[arg(long, default_value_t = 26)]
    sparse: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    negative_fraction: f64,
    #[arg(long, default_value_t = 0.02)]
    nan_fraction: f64,
    /// Distinct tokens per sparse column.
    #[arg(long, default_value_t = 10_000)]
    cardinality: usize,
    /// Hex digits per sparse token.
    #[arg(long, default_value_t = 8)]
    token_width: u8,
}

impl DatasetArgs {
    fn spec(&self) -> DatasetSpec {
        DatasetSpec {
            rows: self.rows,
            dense_features: self.dense,
            sparse_features: self.sparse,
            seed: self.seed,
            negative_fraction: self.negative_fraction,
            nan_fraction: self.nan_fraction,
            sparse_cardinality: self.cardinality,
            token_width: self.token_width,
        }
    }
}

#[derive(Debug, Args)]
struct GenArgs {
    #[command(flatten)]
    dataset: DatasetArgs,
    /// Column file to write.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    /// Preset name (P-I, P-II, P-III) or a key=value description.
    #[arg(short, long, conflicts_with = "spec_file")]
    pipeline: Option<String>,
    /// File holding a key=value pipeline description.
    #[arg(long)]
    spec_file: Option<PathBuf>,
}

impl PipelineArgs {
    fn text(&self, default: &str) -> Result<String, Failure> {
        match (&self.pipeline, &self.spec_file) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(path)) => std::fs::read_to_string(path)
                .with_context(|| format!("cannot read spec file {}", path.display()))
                .map_err(Failure::Usage),
            (None, None) => Ok(default.to_string()),
        }
    }

    fn compile(&self, default: &str) -> Result<PipelineSpec, Failure> {
        let text = self.text(default)?;
        compile_spec(&text).map_err(|e| Failure::Usage(e.into()))
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Column file to read.
    #[arg(short, long)]
    input: Option<PathBuf>,
    /// Column file to write.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    bind: String,
    #[arg(long, default_value_t = 7)]
    slots: usize,
    /// Spool directory for stateful sessions; overrides MINIPIPE_SPOOL_DIR.
    #[arg(long)]
    spool_dir: Option<PathBuf>,
    /// Stop after this many seconds instead of running until killed.
    #[arg(long)]
    duration_secs: Option<u64>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[command(flatten)]
    dataset: DatasetArgs,
    /// Comma-separated slot counts.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4")]
    slots: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    trials: usize,
    #[arg(long, default_value_t = 2)]
    warmups: usize,
    /// Per-operator timings instead of whole pipelines.
    #[arg(long)]
    operators: bool,
    /// JSON-lines report file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug)]
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

fn usage(msg: impl std::fmt::Display) -> Failure {
    Failure::Usage(anyhow::anyhow!("{msg}"))
}

fn check_output(path: &Path) -> Result<(), Failure> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = parent {
        if !dir.is_dir() {
            return Err(usage(format!(
                "output directory {} does not exist",
                dir.display()
            )));
        }
    }
    if path.is_dir() {
        return Err(usage(format!("output {} is a directory", path.display())));
    }
    Ok(())
}

fn gen(args: GenArgs) -> Result<(), Failure> {
    check_output(&args.output)?;
    let spec = args.dataset.spec();
    spec.validate().map_err(|e| Failure::Usage(e.into()))?;
    let batch = generate_synthetic(&spec)?;
    let file = File::create(&args.output)
        .with_context(|| format!("cannot create {}", args.output.display()))?;
    let mut out = BufWriter::new(file);
    let written = write_column_file(&batch, &mut out)?;
    out.flush()?;
    eprintln!(
        "wrote {} rows ({written} bytes) to {}",
        spec.rows,
        args.output.display()
    );
    Ok(())
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let spec = args.pipeline.compile("P-I")?;
    let input = args
        .input
        .ok_or_else(|| usage("run needs an input file (-i)"))?;
    let output = args
        .output
        .ok_or_else(|| usage("run needs an output file (-o)"))?;
    if !input.is_file() {
        return Err(usage(format!("input {} is not a file", input.display())));
    }
    check_output(&output)?;

    let engine = Engine::new(EngineConfig::with_slots(1))?;
    engine.reconfigure(0, spec.clone())?;
    let mut source =
        FileSource::open(&input).with_context(|| format!("cannot read {}", input.display()))?;
    let mut sink =
        FileSink::create(&output).with_context(|| format!("cannot create {}", output.display()))?;
    let stats = engine
        .run(0, &mut source, &mut sink)
        .with_context(|| format!("pipeline {} failed on {}", spec.id(), input.display()))?;
    eprintln!(
        "{}: {} rows, {} -> {} bytes in {:.3}s",
        spec.id(),
        stats.rows,
        stats.input_bytes,
        stats.output_bytes,
        stats.elapsed.as_secs_f64()
    );
    Ok(())
}

fn serve_cmd(args: ServeArgs) -> Result<(), Failure> {
    let config = EngineConfig {
        spool_dir: args.spool_dir,
        ..EngineConfig::with_slots(args.slots)
    };
    config.validate().map_err(|e| Failure::Usage(e.into()))?;
    let handle = serve(args.bind.as_str(), config)?;
    eprintln!(
        "listening on {} with {} slots",
        handle.local_addr(),
        args.slots
    );
    match args.duration_secs {
        Some(secs) => {
            std::thread::sleep(Duration::from_secs(secs));
            let stats = handle.shutdown();
            eprintln!(
                "sessions: {} started, {} completed, {} failed, {} busy",
                stats.sessions_started,
                stats.sessions_completed,
                stats.sessions_failed,
                stats.busy_rejections
            );
            Ok(())
        }
        None => loop {
            std::thread::park();
        },
    }
}

fn bench(args: BenchArgs) -> Result<(), Failure> {
    if let Some(out) = &args.out {
        check_output(out)?;
    }
    if args.trials < minipipe::bench::MIN_TRIALS {
        return Err(usage(format!(
            "--trials must be at least {}",
            minipipe::bench::MIN_TRIALS
        )));
    }
    if args.slots.is_empty() || args.slots.contains(&0) {
        return Err(usage("--slots needs counts of at least 1"));
    }
    let dataset = args.dataset.spec();
    dataset.validate().map_err(|e| Failure::Usage(e.into()))?;
    let opts = BenchOptions {
        trials: args.trials,
        warmups: args.warmups,
    };
    let reports = if args.operators {
        bench_operators(&dataset, &opts)?
    } else {
        let spec = args.pipeline.compile("P-I")?;
        bench_pipeline(&spec, &dataset, &args.slots, &opts)?
    };
    print!("{}", render_table(&reports));
    if let Some(out) = &args.out {
        let file = File::create(out).with_context(|| format!("cannot create {}", out.display()))?;
        let mut w = BufWriter::new(file);
        write_reports(&mut w, &reports)?;
        w.flush()?;
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Gen(a) => gen(a),
        Command::Run(a) => run(a),
        Command::Serve(a) => serve_cmd(a),
        Command::Bench(a) => bench(a),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            if let Some(PipelineError::UnknownPreset(_)) = e.downcast_ref::<PipelineError>() {
                eprintln!("valid presets: {}", preset_list());
            }
            eprintln!("run `minipipe --help` for usage");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn preset_list() -> String {
    minipipe::pipeline::PRESETS
        .iter()
        .map(|p| p.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}
