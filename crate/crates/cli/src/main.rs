//! `hrmsdt`: simulate, fit and analyze rater-mediated assessment data.
//!
//! Every subcommand works inside one run directory (`--out`, default
//! `runs/default`) and records its resolved settings and the SHA-256 of each
//! file it read or wrote in `manifest.json`.
//!
//! Exit codes: 0 success, 1 validation error, 2 diagnostic threshold
//! failure, 3 I/O error. No environment variables are required; `RUST_LOG`
//! adjusts log verbosity.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hrmsdt_core::model::LikelihoodMode;
use hrmsdt_core::simulator::LoadingStructure;

#[derive(Debug, Parser)]
#[command(
    name = "hrmsdt",
    version,
    about = "Hierarchical rater signal-detection model: simulate, fit, analyze"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a blueprint, ratings and ground truth.
    Simulate(SimulateArgs),
    /// Fit the model with NUTS and write draws plus a fit report.
    Fit(FitArgs),
    /// Compute post-estimation diagnostics from stored draws.
    Analyze(AnalyzeArgs),
    /// Compare the analytic gradient with central finite differences.
    CheckGrad(CheckGradArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// JSON file with simulation settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Random seed [default: 1].
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, default_value = "runs/default")]
    out: PathBuf,
    /// Number of learners [default: 40].
    #[arg(long)]
    learners: Option<usize>,
    /// Competency dimensions [default: 6].
    #[arg(long)]
    dims: Option<usize>,
    /// Cases [default: 4].
    #[arg(long)]
    cases: Option<usize>,
    /// Raters [default: 4].
    #[arg(long)]
    raters: Option<usize>,
    /// Theta-groups [default: one per dimension].
    #[arg(long)]
    groups: Option<usize>,
    /// Items per case, universal items included [default: 30].
    #[arg(long)]
    items_per_case: Option<usize>,
    /// Universal items per case [default: 6].
    #[arg(long)]
    universal_items_per_case: Option<usize>,
    /// Minimum items per dimension over the blueprint [default: 5].
    #[arg(long)]
    min_items_per_dim: Option<usize>,
    /// Loading structure [default: pure].
    #[arg(long, value_parser = parse_loadings)]
    loadings: Option<LoadingStructure>,
    /// Set every applicability logit to this value.
    #[arg(long, allow_hyphen_values = true)]
    omega: Option<f64>,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// JSON file with `sampler`, `prior`, `likelihood` and threshold settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base sampler seed; chain `k` uses `seed XOR k` [default: 20240601].
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, default_value = "runs/default")]
    out: PathBuf,
    /// Blueprint file [default: <out>/blueprint.json].
    #[arg(long)]
    blueprint: Option<PathBuf>,
    /// Ratings file [default: <out>/ratings.csv].
    #[arg(long)]
    ratings: Option<PathBuf>,
    /// JSON prior configuration; replaces the `prior` section of --config.
    #[arg(long)]
    prior: Option<PathBuf>,
    /// Chains [default: 4].
    #[arg(long)]
    chains: Option<usize>,
    /// Warmup iterations per chain [default: 1000].
    #[arg(long)]
    warmup: Option<usize>,
    /// Retained draws per chain [default: 750].
    #[arg(long)]
    draws: Option<usize>,
    /// Target acceptance statistic [default: 0.99].
    #[arg(long)]
    target_accept: Option<f64>,
    /// Maximum tree depth [default: 10].
    #[arg(long)]
    max_depth: Option<usize>,
    /// Likelihood for ratings sharing a latent state [default: per-rating].
    #[arg(long)]
    likelihood: Option<LikelihoodMode>,
    /// Fail when any R̂ exceeds this [default: 1.05].
    #[arg(long)]
    max_rhat: Option<f64>,
    /// Fail when the share of divergent draws exceeds this [default: 0.01].
    #[arg(long)]
    max_divergence_rate: Option<f64>,
    /// Report threshold failures without a nonzero exit status.
    #[arg(long)]
    warn_only: bool,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// JSON file with analysis options; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Permutation seed [default: 20240601].
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; results go to <out>/analysis.
    #[arg(long, default_value = "runs/default")]
    out: PathBuf,
    /// Blueprint file [default: <out>/blueprint.json].
    #[arg(long)]
    blueprint: Option<PathBuf>,
    /// Ratings file [default: <out>/ratings.csv].
    #[arg(long)]
    ratings: Option<PathBuf>,
    /// Directory of chain_<k>.csv files [default: <out>/draws].
    #[arg(long)]
    draws: Option<PathBuf>,
    /// Generating values [default: <out>/truth.json when present].
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Skip the recovery section even when a truth file exists.
    #[arg(long, conflicts_with = "truth")]
    no_truth: bool,
    /// Permutations per consistency test [default: 1000].
    #[arg(long)]
    n_perm: Option<usize>,
    /// Likelihood used for case-conditional estimates [default: the fit's].
    #[arg(long)]
    likelihood: Option<LikelihoodMode>,
}

#[derive(Debug, Args)]
struct CheckGradArgs {
    /// Seed for the test instance and evaluation points.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Likelihood to check.
    #[arg(long, default_value_t = LikelihoodMode::PerRating)]
    likelihood: LikelihoodMode,
    /// Number of random evaluation points.
    #[arg(long, default_value_t = 20)]
    points: usize,
    /// Write the JSON report here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Negate one gradient coordinate before checking.
    #[arg(long, hide = true)]
    inject_sign_flip: Option<usize>,
}

fn parse_loadings(s: &str) -> Result<LoadingStructure, String> {
    match s {
        "pure" => Ok(LoadingStructure::Pure),
        "mixed" => Ok(LoadingStructure::Mixed),
        other => Err(format!("unknown loading structure '{other}' (expected pure or mixed)")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Fit(a) => commands::fit(a),
        Command::Analyze(a) => commands::analyze(a),
        Command::CheckGrad(a) => commands::check_grad(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = e.to_string();
            for cause in e.chain().skip(1).map(ToString::to_string) {
                if !msg.contains(&cause) {
                    msg = format!("{msg}: {cause}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
