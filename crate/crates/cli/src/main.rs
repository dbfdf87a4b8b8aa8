mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use prunebench::Error;

#[derive(Parser, Debug)]
#[command(name = "prunebench", version, about = "Structured pruning, fine-tuning and latency benchmarks for a streaming denoiser")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Derives the channel vector for a prune fraction.
    DeriveConfig(DeriveConfigArgs),
    /// Builds a seeded, untrained model.
    Init(InitArgs),
    /// Trains a model on a generated dataset.
    Train(TrainArgs),
    /// Structured (--target) or GRU magnitude (--unstructured) pruning.
    Prune(PruneArgs),
    /// Continues training a (pruned) model.
    Finetune(TrainArgs),
    /// Prints the held-out proxy loss.
    Eval(EvalArgs),
    /// Per-frame latency with 95% confidence intervals.
    Benchmark(BenchmarkArgs),
    /// Share of forward time per operator category.
    Profile(ProfileArgs),
    /// Dense vs GRU-sparse latency comparison.
    Compare(CompareArgs),
    /// Derived tables from saved benchmark reports.
    Report {
        #[command(subcommand)]
        kind: ReportKind,
    },
    /// Training ablations.
    Ablate {
        #[command(subcommand)]
        kind: AblateKind,
    },
}

#[derive(Args, Debug)]
pub struct SeedArg {
    /// Seed for model initialisation and batch shuffling.
    #[arg(long, env = "PRUNEBENCH_SEED", default_value_t = 42)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct DeriveConfigArgs {
    /// Base channel vector `c1,c2,c3,c4` or a configuration name.
    #[arg(long, default_value = "32,64,128,256")]
    pub base: String,
    /// Prune fraction p in [0, 1).
    #[arg(long, required_unless_present = "all")]
    pub fraction: Option<f64>,
    /// Prints every standard configuration derived from the base.
    #[arg(long)]
    pub all: bool,
    /// Emits JSON instead of plain text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct InitArgs {
    /// Configuration name (CRUSE32, P.625, ...) or `c1,c2,c3,c4`.
    #[arg(long)]
    pub config: String,
    #[arg(long, default_value_t = 16)]
    pub freq_bins: usize,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    #[arg(long, default_value_t = 256)]
    pub sequences: usize,
    #[arg(long, default_value_t = 16)]
    pub frames: usize,
    #[arg(long, default_value_t = 0.0)]
    pub snr_db: f64,
    /// Seed of the generated training set.
    #[arg(long, default_value_t = 1)]
    pub data_seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct EvalDataArgs {
    #[arg(long, default_value_t = 32)]
    pub eval_sequences: usize,
    /// Seed of the held-out set.
    #[arg(long, default_value_t = 2)]
    pub eval_seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Args, Debug)]
pub struct PruneArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Target configuration name or `c1,c2,c3,c4`.
    #[arg(long, conflicts_with = "unstructured", required_unless_present = "unstructured")]
    pub target: Option<String>,
    /// Fraction of each GRU weight matrix to zero by magnitude.
    #[arg(long)]
    pub unstructured: Option<f64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub frames: usize,
    #[arg(long, default_value_t = 0.0)]
    pub snr_db: f64,
    #[command(flatten)]
    pub eval: EvalDataArgs,
    /// Also writes eval.json and a run manifest here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 100)]
    pub frames_per_sample: usize,
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    #[arg(long, default_value_t = 10)]
    pub warmup: usize,
}

/// Models given as saved directories and/or seeded configurations.
#[derive(Args, Debug, Clone)]
pub struct ModelSource {
    /// Saved model directory; repeatable.
    #[arg(long = "model")]
    pub models: Vec<PathBuf>,
    /// Configuration name or vector, built with the run seed; repeatable.
    #[arg(long = "config")]
    pub configs: Vec<String>,
    /// Frequency bins for `--config` models.
    #[arg(long, default_value_t = 16)]
    pub freq_bins: usize,
}

#[derive(Args, Debug)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub source: ModelSource,
    #[command(flatten)]
    pub bench: BenchArgs,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ProfileArgs {
    #[command(flatten)]
    pub source: ModelSource,
    #[arg(long, default_value_t = 100)]
    pub frames: usize,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Benchmarks GRU magnitude pruning at each of --fracs.
    #[arg(long, required = true)]
    pub sparse: bool,
    #[command(flatten)]
    pub source: ModelSource,
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75")]
    pub fracs: Vec<f64>,
    #[command(flatten)]
    pub bench: BenchArgs,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum ReportKind {
    /// Speedup and memory reduction against a baseline row.
    Speedup {
        /// reports.json files written by `benchmark` or `compare`.
        #[arg(long = "reports", required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        baseline: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
pub struct AblateCommon {
    /// Trained base model directory.
    #[arg(long)]
    pub model: PathBuf,
    /// Target configuration name or vector.
    #[arg(long)]
    pub target: String,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub optim: OptimArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub eval: EvalDataArgs,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Subcommand, Debug)]
pub enum AblateKind {
    /// Prune + fine-tune against training the target from scratch for the same total epochs.
    PruneVsDirect {
        #[command(flatten)]
        common: AblateCommon,
        /// Epochs the base model was trained for; the direct arm gets these plus --epochs.
        #[arg(long)]
        base_epochs: usize,
    },
    /// Fine-tunes the pruned model once per learning rate.
    LrSweep {
        #[command(flatten)]
        common: AblateCommon,
        #[arg(long, value_delimiter = ',', default_value = "1e-3,1e-4,1e-5,1e-6")]
        lrs: Vec<f64>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}

/// Errors raised while validating CLI input count as usage errors.
pub fn usage(msg: impl Into<String>) -> Error {
    Error::Argument(msg.into())
}
