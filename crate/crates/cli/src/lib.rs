//! Command-line front end: sampling, post-processing, evidence and
//! efficiency tables.

pub mod commands;
pub mod efficiency;
mod error;
mod output;

pub use error::{CliError, CliResult};

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "zvcv", version, about = "Control variates for SMC output")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Adaptive pilot run followed by seeded replays of its schedule.
    Smc(SmcArgs),
    /// Estimate expectations from one archived population.
    Postprocess(PostprocessArgs),
    /// Estimate the log evidence from an archived run.
    Evidence(EvidenceArgs),
    /// Efficiency table from replicate estimate files.
    Efficiency(EfficiencyArgs),
}

#[derive(Debug, Args)]
pub struct SmcArgs {
    /// Model manifest (JSON).
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 0.5)]
    pub rho: f64,
    #[arg(long = "rho-tilde", default_value_t = 0.9)]
    pub rho_tilde: f64,
    #[arg(long, default_value_t = 0.01)]
    pub hmin: f64,
    #[arg(long, default_value_t = 1.0)]
    pub hmax: f64,
    /// Fraction of particles that must pass the jump threshold.
    #[arg(long = "jump-fraction", default_value_t = 0.5)]
    pub jump_fraction: f64,
    /// `mean` or `median` inter-particle distance as the jump threshold.
    #[arg(long = "jump-stat", default_value = "mean")]
    pub jump_stat: String,
    #[arg(long = "max-repeats", default_value_t = 100)]
    pub max_repeats: usize,
    /// Replays of the pilot schedule.
    #[arg(long, default_value_t = 0)]
    pub replicates: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Replicates run at once; defaults to the number of cores.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PostprocessArgs {
    /// Run directory, or a single sample CSV.
    #[arg(long)]
    pub archive: PathBuf,
    /// Comma-separated methods, e.g. `vanilla,zv:Q=2:lasso,crossval,cf`.
    #[arg(long, default_value = "vanilla")]
    pub methods: String,
    /// `mean`, `square`, `theta:k` or `square:k` (1-based), comma-separated.
    #[arg(long, default_value = "mean")]
    pub integrands: String,
    /// Population to use from a run directory.
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output JSON; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvidenceArgs {
    #[arg(long)]
    pub archive: PathBuf,
    /// `cti1`, `cti2` or `smc`.
    #[arg(long, default_value = "cti2")]
    pub estimator: String,
    #[arg(long, default_value = "vanilla")]
    pub methods: String,
    /// Re-place temperatures to hold the CESS at this fraction first.
    #[arg(long = "posthoc-rho")]
    pub posthoc_rho: Option<f64>,
    /// Mean inside the variance term: `cv` or `raw`.
    #[arg(long = "v-mean", default_value = "cv")]
    pub v_mean: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EfficiencyArgs {
    /// Replicate estimate files written by `postprocess` or `evidence`.
    #[arg(long, num_args = 1.., required = true)]
    pub estimates: Vec<PathBuf>,
    /// Known true value, used for every integrand.
    #[arg(long, conflicts_with_all = ["gold_file", "gold_method"])]
    pub gold: Option<f64>,
    /// JSON object mapping integrand names to true values.
    #[arg(long = "gold-file", conflicts_with = "gold_method")]
    pub gold_file: Option<PathBuf>,
    /// Use the replicate mean of this method as the true value.
    #[arg(long = "gold-method")]
    pub gold_method: Option<String>,
    /// Baseline method for the efficiency ratios.
    #[arg(long, default_value = "vanilla")]
    pub baseline: String,
    /// CSV table; a Markdown table goes to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub markdown: Option<PathBuf>,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Smc(a) => commands::smc::run(&a),
        Command::Postprocess(a) => commands::postprocess::run(&a),
        Command::Evidence(a) => commands::evidence::run(&a),
        Command::Efficiency(a) => commands::efficiency::run(&a),
    }
}
