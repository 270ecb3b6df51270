//! `hrvfair` command-line driver. [`run`] parses arguments, executes one
//! command and returns the process exit code: 0 on success, 1 for I/O or
//! data errors, 2 for usage errors.

mod commands;
mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub use output::write_atomic;

#[derive(Debug, Parser, Serialize)]
#[command(name = "hrvfair", version, about = "Bias audit and uncertainty-based bias mitigation for HRV anxiety models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Compute the 25 HRV features from ECG or NN-interval CSV files, one
    /// output row per input file.
    Extract(ExtractArgs),
    /// Generate a synthetic cohort with a planted protected-attribute bias.
    Synth(SynthArgs),
    /// Disparate impact of the labels, or of predictions when given.
    Audit(AuditArgs),
    /// Train the single-task anxiety baseline.
    TrainBase(TrainArgs),
    /// Train the baseline with reweighing sample weights.
    ReweighTrain(TrainArgs),
    /// Multi-task training, uncertainty scoring and checkpoint selection.
    Mitigate(TrainArgs),
    /// Average input-gradient saliency of a trained model.
    Saliency(SaliencyArgs),
    /// Score base, reweighing and mitigated models on one split.
    Compare(TrainArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct ExtractArgs {
    /// ECG CSV files with columns t_seconds,voltage.
    #[arg(long, num_args = 1.., conflicts_with = "nni", required_unless_present = "nni")]
    pub ecg: Vec<PathBuf>,
    /// NN-interval CSV files with one column interval_ms.
    #[arg(long, num_args = 1..)]
    pub nni: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long = "bias", default_value_t = 0.8)]
    pub bias_strength: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DataArgs {
    #[arg(long)]
    pub windows: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub demo: PathBuf,
    /// Protected attribute column of the demographics file.
    #[arg(long)]
    pub protected: String,
}

#[derive(Debug, Args, Serialize)]
pub struct AuditArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// CSV with columns sample_id,prediction; audits these instead of the
    /// labels.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecArg {
    Sequential,
    Parallel,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 100)]
    pub epochs: u32,
    #[arg(long, default_value_t = 5)]
    pub ckpt_every: u32,
    #[arg(long, default_value_t = 50)]
    pub mc_passes: usize,
    #[arg(long, default_value_t = 0.8)]
    pub keep_rate: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 32)]
    pub hidden: usize,
    #[arg(long, default_value_t = 16)]
    pub dense: usize,
    #[arg(long, default_value_t = 4.5)]
    pub anxiety_weight: f64,
    #[arg(long, default_value_t = 0.5)]
    pub protected_weight: f64,
    /// Score checkpoint uncertainty on the test split instead of train.
    #[arg(long)]
    pub heldout_uncertainty: bool,
    /// Keep every participant's windows on one side of the split.
    #[arg(long)]
    pub by_participant: bool,
    #[arg(long, value_enum, default_value_t = ExecArg::Parallel)]
    pub exec: ExecArg,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadArg {
    Anxiety,
    Protected,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitArg {
    Test,
    Train,
    All,
}

#[derive(Debug, Args, Serialize)]
pub struct SaliencyArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint written by train-base, reweigh-train or mitigate.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = HeadArg::Anxiety)]
    pub head: HeadArg,
    /// Windows to average over; the split is recomputed from --seed.
    #[arg(long, value_enum, default_value_t = SplitArg::Test)]
    pub split: SplitArg,
    #[arg(long)]
    pub by_participant: bool,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match commands::execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
