//! `vsrpp`: degradation, toy training, restoration, evaluation, ablation
//! and temporal profiles from the command line.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "vsrpp",
    version,
    about = "Video super-resolution with second-order grid propagation"
)]
struct Cli {
    /// JSON-lines file every run appends its manifest to.
    #[arg(long, global = true, env = "VSRPP_MANIFEST", default_value = "vsrpp-runs.jsonl")]
    manifest: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Degrade an HR clip directory to LR (BI or BD).
    Degrade(DegradeArgs),
    /// Train a toy-scale model.
    TrainToy(TrainArgs),
    /// Super-resolve a clip directory with trained weights.
    Restore(RestoreArgs),
    /// PSNR/SSIM of predicted frames against ground truth.
    Eval(EvalArgs),
    /// Train and evaluate one ablation variant and append a comparison row.
    Ablate(AblateArgs),
    /// Temporal profile image and consistency score of one column.
    Profile(ProfileArgs),
}

#[derive(Args, Debug)]
pub struct DegradeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "BI")]
    pub mode: String,
    #[arg(long, default_value_t = 4)]
    pub scale: usize,
    #[arg(long, default_value_t = 1.6)]
    pub sigma: f64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Network config (key=value); defaults to the toy preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Directory of HR clips, or `synthetic:<translate|rotate_zoom|texture_noise>`.
    #[arg(long, default_value = "synthetic:translate")]
    pub data: String,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Training recipe: `toy` runs, `paper` prints the published recipe and exits.
    #[arg(long, default_value = "toy")]
    pub preset: String,
    #[arg(long)]
    pub batch: Option<usize>,
    /// LR patch side.
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub seq_len: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub log_every: Option<u64>,
    #[arg(long)]
    pub freeze_steps: Option<u64>,
    /// `pyramidal` or `zero`.
    #[arg(long, default_value = "pyramidal")]
    pub flow: String,
}

#[derive(Args, Debug)]
pub struct RestoreArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "pyramidal")]
    pub flow: String,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, default_value = "y")]
    pub convention: String,
    /// CSV destination; defaults to `metrics.csv` inside `--pred`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub variant: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "synthetic:translate")]
    pub data: String,
    #[arg(long, default_value_t = 500)]
    pub steps: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Receives the variant's weights and `ablation.csv`.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "pyramidal")]
    pub flow: String,
}

#[derive(Args, Debug)]
pub struct ProfileArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub column: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn error_record(kind: &str, message: &str) -> String {
    let flat = message.split_whitespace().collect::<Vec<_>>().join(" ");
    format!("vsrpp: error[{kind}]: {flat}")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let text = e.to_string();
            let first = text
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("{}", error_record("usage", first));
            return ExitCode::from(2);
        }
    };
    let result = match &cli.command {
        Command::Degrade(a) => commands::degrade(a, &cli.manifest),
        Command::TrainToy(a) => commands::train_toy(a, &cli.manifest),
        Command::Restore(a) => commands::restore(a, &cli.manifest),
        Command::Eval(a) => commands::eval(a, &cli.manifest),
        Command::Ablate(a) => commands::ablate(a, &cli.manifest),
        Command::Profile(a) => commands::profile(a, &cli.manifest),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_record(e.kind(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}
