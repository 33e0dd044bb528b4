//! `argmine`: command-line pipelines for multi-task argument mining.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 data error, 3 runtime
//! failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[global_allocator]
static ALLOC: argmine::memory::PeakAlloc = argmine::memory::PeakAlloc;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "argmine", version, about = "Multi-task argument mining pipelines")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config's output_dir.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Writes a synthetic corpus with known cue structure.
    Synthesize(commands::SynthesizeArgs),
    /// Runs the corpus adapters, splits and computes training statistics.
    Ingest(commands::IngestArgs),
    /// Adds augmented copies of the TRAIN records.
    Augment(commands::DataArgs),
    /// Trains encoder and head with early stopping.
    Train(commands::DataArgs),
    /// Trains every point of the hyperparameter grid.
    GridSearch(commands::DataArgs),
    /// Tunes per-task thresholds on VAL.
    TuneThresholds(commands::ModelArgs),
    /// Scores a checkpoint on a split.
    Evaluate(commands::EvaluateArgs),
    /// Random and unigram naive Bayes baselines.
    Baseline(commands::BaselineArgs),
    /// Representation dumps, t-SNE projections and plots.
    Diagnose(commands::DiagnoseArgs),
    /// One-epoch time and memory over data fractions.
    Profile(commands::DataArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    match cli.command {
        Command::Synthesize(a) => commands::synthesize(g, a),
        Command::Ingest(a) => commands::ingest(g, a),
        Command::Augment(a) => commands::augment(g, a),
        Command::Train(a) => commands::train(g, a),
        Command::GridSearch(a) => commands::grid_search(g, a),
        Command::TuneThresholds(a) => commands::tune_thresholds(g, a),
        Command::Evaluate(a) => commands::evaluate(g, a),
        Command::Baseline(a) => commands::baseline(g, a),
        Command::Diagnose(a) => commands::diagnose(g, a),
        Command::Profile(a) => commands::profile(g, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.code())
        }
    }
}
