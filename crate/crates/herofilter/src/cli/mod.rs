//! The `herofilter` command-line pipeline.
//!
//! Every subcommand resolves its configuration as built-in defaults, then
//! the JSON file given with `--config`, then explicit flags, and writes the
//! result to `effective_config.json` in each output directory. Exit codes:
//! 0 on success, 1 on usage errors (bad flags or config keys), 2 on
//! runtime errors.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{AnalysisConfig, FilterKind, SweepConfig};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "HEROFILTER_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Runtime(#[from] crate::Error),
}

impl From<herofilter_core::Error> for CliError {
    fn from(e: herofilter_core::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "herofilter",
    version,
    about = "Adaptive spectral patching and mixer training for node classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic graph with a target mean node heterophily.
    Synth(SynthArgs),
    /// Heterophily profile and spectrum of a dataset.
    Analyze(AnalyzeArgs),
    /// Select ranked patches for every node.
    Patch(PatchArgs),
    /// Train a mixer and save report, metrics, checkpoint and patches.
    Train(TrainArgs),
    /// Evaluate a saved run on one split.
    Eval(EvalArgs),
    /// Numerical checks of the filter-response, alignment and error bounds.
    Bounds(BoundsArgs),
    /// Accuracy grid over heterophily levels and spectral bands.
    Sweep(SweepArgs),
    /// Edge list of the graph induced by a patch file.
    ExportInduced(ExportArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    heterophily: Option<f64>,
    #[arg(long)]
    avg_degree: Option<f64>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct FilterArgs {
    /// lowpass, band or poly.
    #[arg(long)]
    filter: Option<String>,
    #[arg(long)]
    band_lo: Option<f64>,
    #[arg(long)]
    band_hi: Option<f64>,
    /// Polynomial order of the `poly` filter and of the aligning construction.
    #[arg(long)]
    order: Option<usize>,
    /// Initial value of every `poly` filter weight.
    #[arg(long)]
    init: Option<f64>,
    /// sym or sym_selfloop.
    #[arg(long)]
    norm_mode: Option<String>,
    #[arg(long)]
    eps: Option<f64>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also write analysis.json, spectrum.csv, frequency_response.csv and
    /// heterophily.json here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    filter: FilterArgs,
}

#[derive(Debug, Args)]
struct BoundsArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also write bounds.json here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    filter: FilterArgs,
}

#[derive(Debug, Args)]
struct PatchArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// static, spectral, fast or low_pass.
    #[arg(long)]
    patcher: Option<String>,
    #[arg(long = "p")]
    patch_size: Option<usize>,
    /// Dangling scalar of the fast patcher.
    #[arg(long)]
    c: Option<f64>,
    /// Neumann truncation order of the fast patcher.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    filter_order: Option<usize>,
    #[arg(long)]
    norm_mode: Option<String>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// static, spectral, fast or low_pass.
    #[arg(long)]
    patcher: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long = "p")]
    patch_size: Option<usize>,
    #[arg(long)]
    filter_order: Option<usize>,
    #[arg(long)]
    refresh_interval: Option<usize>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Directory written by `train`.
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// train, val or test.
    #[arg(long, default_value = "test")]
    split: String,
    /// Also write eval.json here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated target heterophily levels.
    #[arg(long, value_delimiter = ',')]
    h_values: Option<Vec<f64>>,
    /// First sweep seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of consecutive seeds starting at `--seed`.
    #[arg(long)]
    repeats: Option<u64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    avg_degree: Option<f64>,
    #[arg(long)]
    feature_dim: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long = "p")]
    patch_size: Option<usize>,
    /// Worker threads for independent cells.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    /// A patches.csv written by `patch` or `train`.
    #[arg(long)]
    patches: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code. Errors are reported on standard error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("herofilter: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    let threads = thread_cap()?;
    if let Some(t) = threads {
        // Only the first call in a process can size the global pool.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global();
    }
    match cmd {
        Command::Synth(a) => commands::synth(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::Patch(a) => commands::patch(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Bounds(a) => commands::bounds(a),
        Command::Sweep(a) => commands::sweep(a, threads),
        Command::ExportInduced(a) => commands::export_induced(a),
    }
}

fn thread_cap() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(t) if t > 0 => Ok(Some(t)),
            _ => Err(CliError::Usage(format!(
                "{THREADS_ENV} must be a positive integer, got {v:?}"
            ))),
        },
    }
}
