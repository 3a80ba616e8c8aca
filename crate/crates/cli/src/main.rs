//! Command-line entry point. Settings come from built-in defaults, then the
//! `--config` file, then command-line flags, each overriding the previous.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "daf3d", version, about = "3D attention-guided segmentation: synthesis, training, evaluation")]
pub struct Cli {
    /// Experiment config file (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic phantom volumes, masks and a manifest.
    Synth(SynthArgs),
    /// Train on every case of a manifest.
    Train(TrainArgs),
    /// K-fold cross-validation over a manifest.
    Crossval(CrossvalArgs),
    /// Segment volumes with a trained checkpoint.
    Predict(PredictArgs),
    /// Score predicted masks against ground truth.
    Evaluate(EvaluateArgs),
    /// Compare evaluation CSVs with rank-sum tests and ANOVA.
    Stats(StatsArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Number of phantom pairs.
    #[arg(long)]
    pub count: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset manifest CSV (defaults to `data.manifest`).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Args, Debug)]
pub struct CrossvalArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Number of folds when the manifest has no fold column (defaults to `train.folds`).
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A single volume file.
    #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
    pub input: Option<PathBuf>,
    /// Predict every volume of a manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Overrides `train.threshold`.
    #[arg(long)]
    pub threshold: Option<f32>,
    /// Write the channel mean of each attention map as raw volumes.
    #[arg(long, value_name = "DIR")]
    pub dump_attention: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Ground-truth manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Directory holding `<case_id>.nii.gz`, `<case_id>.nii` or `<case_id>.raw` masks.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Report surface distances in millimetres.
    #[arg(long)]
    pub mm: bool,
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    /// Two or more evaluation CSVs; rank-sum tests compare the first two.
    #[arg(required = true, num_args = 2..)]
    pub csv: Vec<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
