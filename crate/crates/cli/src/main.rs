mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "cqrnn",
    version,
    about = "Censored quantile regression experiments"
)]
pub struct Cli {
    /// Master seed (default 42); every stochastic stage derives its own seed from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    pub out_dir: PathBuf,
    /// Worker threads for independent fits (default 1).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Recompute outputs that already exist.
    #[arg(long, global = true)]
    pub force: bool,
    /// JSON file with `train` and `replicate` blocks; flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic or censored dataset CSV with a manifest.
    Generate(GenerateArgs),
    /// Fit models on a dataset; one result file per (model, theta, seed, lr) cell.
    Fit(FitArgs),
    /// Score fitted models on a test set.
    Evaluate(EvaluateArgs),
    /// Reproduce one of the tables and check it against the acceptance criteria.
    Replicate(ReplicateArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Synthetic benchmark noise: standard-gaussian, heteroskedastic, gaussian-mixture or zero.
    #[arg(long, conflicts_with = "censor")]
    pub synthetic: Option<String>,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Censoring scheme for a count series: partial or fleet.
    #[arg(long)]
    pub censor: Option<String>,
    /// `date,count` CSV to censor; the bundled synthetic series when absent.
    #[arg(long)]
    pub series: Option<PathBuf>,
    #[arg(long, default_value_t = 730)]
    pub days: usize,
    #[arg(long, default_value_t = 0.5)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.34)]
    pub c1: f64,
    #[arg(long, default_value_t = 0.66)]
    pub c2: f64,
    #[arg(long, default_value_t = 0.2)]
    pub alpha: f64,
    #[arg(long, default_value_t = 300)]
    pub vehicles: usize,
    #[arg(long, default_value_t = 2.0)]
    pub rate: f64,
    #[arg(long, default_value_t = 0.3)]
    pub amplitude: f64,
    /// Output file stem inside the output directory.
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Censoring side; read from the dataset manifest when omitted.
    #[arg(long)]
    pub side: Option<String>,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "tl-linear,c-linear,c-elu"
    )]
    pub models: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.5,0.95")]
    pub thetas: Vec<f64>,
    /// Learning rates, one cell each.
    #[arg(long, value_delimiter = ',', conflicts_with = "lr_grid")]
    pub lr: Vec<f64>,
    /// Pick the learning rate from the configured grid on validation loss.
    #[arg(long)]
    pub lr_grid: bool,
    /// Weight initialization: ones or normal.
    #[arg(long, default_value = "ones")]
    pub init: String,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    /// random or consecutive.
    #[arg(long, default_value = "random")]
    pub split: String,
    #[arg(long, value_delimiter = ',', default_value = "0.62,0.15,0.23")]
    pub proportions: Vec<f64>,
    /// Replace covariates by this many lags of the observed series.
    #[arg(long)]
    pub lags: Option<usize>,
    /// Divide the series by its observed training mean before fitting.
    #[arg(long)]
    pub scale: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Directory of fit results; defaults to `<out-dir>/fits`.
    #[arg(long)]
    pub fits: Option<PathBuf>,
    /// Test CSV; defaults to `<out-dir>/splits/test.csv`.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// all, non-censored or both.
    #[arg(long, default_value = "both")]
    pub subset: String,
    /// auto, quantile, interval or both.
    #[arg(long, default_value = "auto")]
    pub metrics: String,
    /// Benchmark noise for ground-truth quantiles when no manifest provides it.
    #[arg(long)]
    pub noise: Option<String>,
    #[arg(long)]
    pub exact_mixture: bool,
}

#[derive(Debug, Args)]
pub struct ReplicateArgs {
    /// t1, t2, t3, t4-synthetic or bike-synthetic.
    pub table: String,
    /// The paper's full partial-censoring grid instead of the reduced one.
    #[arg(long)]
    pub full_grid: bool,
    /// Score the mixture against its exact quantiles.
    #[arg(long)]
    pub exact_mixture: bool,
    /// Replace synthetic noise by zero.
    #[arg(long)]
    pub zero_noise: bool,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub real_replicates: Option<usize>,
    #[arg(long)]
    pub inits: Option<usize>,
    /// Use the configured learning rate instead of the grid on count series.
    #[arg(long)]
    pub no_lr_grid: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
