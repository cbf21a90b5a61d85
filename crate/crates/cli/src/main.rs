//! `seqset`: train, sample and evaluate sequential set models from the shell.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage errors.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use seqset::ModelKind;

/// Used whenever `--seed` is omitted; runs never seed from the clock.
const DEFAULT_SEED: u64 = 20_180_525;

#[derive(Parser)]
#[command(name = "seqset", version, about = "Sequential generative models for sets of items")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a neural model on an order file.
    Train(TrainArgs),
    /// Generate orders from a trained checkpoint.
    Generate(GenerateArgs),
    /// Compare a predicted order file with a test order file.
    Evaluate(EvaluateArgs),
    /// Cross-check exact and sampled likelihoods of one set.
    Oracle(OracleArgs),
    /// Write a planted benchmark: train/test corpora and the true distribution.
    Plant(PlantArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainableKind {
    Gru2set,
    Setnn,
    Mrw,
}

impl TrainableKind {
    fn kind(self) -> ModelKind {
        match self {
            TrainableKind::Gru2set => ModelKind::Gru2Set,
            TrainableKind::Setnn => ModelKind::SetNn,
            TrainableKind::Mrw => ModelKind::Mrw,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    model: TrainableKind,
    /// Order file, one comma-separated set per line.
    #[arg(long)]
    train: PathBuf,
    /// Embedding dimension [default: 10].
    #[arg(long)]
    dim: Option<usize>,
    /// Hidden width of the sum-pooling network.
    #[arg(long, default_value_t = 50)]
    hidden: usize,
    /// Largest set the model may emit [default: number of items].
    #[arg(long)]
    max_size: Option<usize>,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    /// Sampled generating paths per training set.
    #[arg(long, default_value_t = 5)]
    samples: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Continue training from this checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Report wall time per epoch and in the manifest (breaks byte-identical reruns).
    #[arg(long)]
    record_time: bool,
}

#[derive(Args)]
struct GenerateArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    count: u64,
    /// Recombine by the biased size distribution of the training data.
    #[arg(long, conflicts_with = "size_dist")]
    size_bias: bool,
    /// Recombine by sizes read from a `k<TAB>probability` file.
    #[arg(long)]
    size_dist: Option<PathBuf>,
    /// Take singletons from this training file instead of the model.
    #[arg(long)]
    hybrid: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    record_time: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
    /// Also write the report (and a manifest) to this file.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    record_time: bool,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    model: PathBuf,
    /// Comma-separated item labels.
    #[arg(long)]
    set: String,
    /// Importance samples for the sampled estimate.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
}

#[derive(Args)]
struct PlantArgs {
    /// Number of items (at most 12).
    #[arg(long)]
    items: usize,
    /// Training sets to draw.
    #[arg(long)]
    train: u64,
    /// Test sets to draw.
    #[arg(long)]
    test: u64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Size profile for the planted distribution.
    #[arg(long)]
    size_dist: Option<PathBuf>,
    /// Output prefix; writes PREFIX.train.txt, PREFIX.test.txt and PREFIX.truth.tsv.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    record_time: bool,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Train(a) => commands::train_cmd(a),
        Command::Generate(a) => commands::generate_cmd(a),
        Command::Evaluate(a) => commands::evaluate_cmd(a),
        Command::Oracle(a) => commands::oracle_cmd(a),
        Command::Plant(a) => commands::plant_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
