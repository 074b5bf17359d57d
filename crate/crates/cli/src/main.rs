//! `rttlab`: train source models, fine-tune them to a target sample, generate
//! synthetic traces and replay traces through the delay emulator.

mod commands;
mod config;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use config::PipelineConfig;

#[derive(Parser, Debug)]
#[command(name = "rttlab", version, about = "Access-time (RTT) modelling pipeline")]
pub struct Cli {
    /// Seed for every random stage (overrides `train.seed` in the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for written artifacts.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// JSON pipeline configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Grid-search a source model on a long trace.
    TrainSource(TrainSourceArgs),
    /// Manage a model library directory.
    #[command(subcommand)]
    Library(LibraryCommand),
    /// Pick the library source closest to a target sample under normalized DTW.
    Select(SelectArgs),
    /// Select a source and fine-tune it on a target sample.
    Finetune(FinetuneArgs),
    /// Generate a synthetic trace from a model.
    Generate(GenerateArgs),
    /// Replay a trace through the delay emulator and report its accuracy.
    Emulate(EmulateArgs),
    /// Score a model's one-step predictions on a trace.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Debug)]
pub struct TrainSourceArgs {
    /// Source trace (trace-csv).
    #[arg(long)]
    pub trace: PathBuf,
    /// Context label; defaults to the trace file name.
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub units: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub batch: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub epochs: Option<Vec<usize>>,
    /// Search the full 448-point grid.
    #[arg(long)]
    pub full_grid: bool,
    /// Also file the trained model in this library.
    #[arg(long)]
    pub library: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum LibraryCommand {
    /// Add a model and its fingerprint trace.
    Add {
        #[arg(long)]
        library: Option<PathBuf>,
        #[arg(long)]
        model: PathBuf,
        /// Source test split in trace-csv format.
        #[arg(long)]
        fingerprint: PathBuf,
    },
    /// Print the library entries as JSON.
    List {
        #[arg(long)]
        library: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    #[arg(long)]
    pub library: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub library: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Number of initial LSTM layers to freeze.
    #[arg(long)]
    pub freeze: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Also train a from-scratch model and report the SMAPE improvement.
    #[arg(long)]
    pub baseline: bool,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Number of samples.
    #[arg(long)]
    pub length: Option<usize>,
    /// Head noise σ; defaults to the model's.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Starting value in ms; defaults to the model's training median.
    #[arg(long)]
    pub seed_value: Option<f64>,
    /// Output trace file; defaults to `<out>/<model>.synthetic.csv`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EmulateArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub pings: Option<usize>,
    /// Report file; defaults to `<out>/<trace>.emulation.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub trace: PathBuf,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.train.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out = Some(out.clone());
    }
    commands::run(cli.command, &config)
}
