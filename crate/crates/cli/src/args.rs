use std::path::PathBuf;

use atme_core::kernel::VarianceMode;
use atme_core::sensitivity::KappaSplit;
use atme_core::simulation::McEstimator;
use atme_core::Method;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(
    name = "atme",
    version,
    about = "Average treatment moderation effects with a randomized treatment and a non-randomized moderator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the moderation effect on a CSV file
    Estimate(EstimateArgs),
    /// Monte Carlo study of the estimators on a simulated design
    Simulate(SimulateArgs),
    /// Unobserved-confounder sensitivity: level curve or full grid
    Sensitivity(SensitivityArgs),
    /// Cell counts, common support, covariate balance and benchmarks
    Diagnose(DiagnoseArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Estimate(_) => "estimate",
            Command::Simulate(_) => "simulate",
            Command::Sensitivity(_) => "sensitivity",
            Command::Diagnose(_) => "diagnose",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

// Every option struct below serializes to the keys accepted by `--config`,
// one per flag. Options are `Option`s so an absent flag can fall back to
// the config file.

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct RunArgs {
    /// JSON file whose keys mirror the flags; flags take precedence
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: available cores); results do not depend on it
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output file (default: standard output)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Output format (default: csv if --out ends in .csv, else json)
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Progress messages on standard error
    #[arg(long, short)]
    pub verbose: bool,
    /// Suppress warnings
    #[arg(long, short)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct DataArgs {
    /// Comma-separated file with a header row
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub outcome: Option<String>,
    #[arg(long)]
    pub treatment: Option<String>,
    #[arg(long)]
    pub moderator: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    /// Column of cluster labels; switches the default variance to cluster-robust
    #[arg(long)]
    pub cluster: Option<String>,
    /// Drop rows with a missing role value instead of failing
    #[arg(long)]
    pub drop_missing: bool,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EstimateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// Estimator (default: parallel-regression)
    #[arg(long)]
    pub method: Option<Method>,
    /// classical, hc1 or cluster
    #[arg(long)]
    pub variance: Option<VarianceMode>,
    /// Confidence level (default: 0.95)
    #[arg(long)]
    pub level: Option<f64>,
    /// Propensity trimming bounds `LO,HI`, or `none`
    #[arg(long)]
    pub trim: Option<String>,
    /// Known treatment probability for propensity weighting
    #[arg(long)]
    pub treatment_prob: Option<f64>,
    /// Bootstrap replications for the matching and weighting variances
    #[arg(long)]
    pub bootstrap: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
    /// `key = value` design file; individual flags override it
    #[arg(long)]
    pub dgp_config: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub tau: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub omega: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub beta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub delta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub xi: Option<f64>,
    /// Outcome noise standard deviation
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub p_treat: Option<f64>,
    /// Moderator model intercept
    #[arg(long, allow_hyphen_values = true)]
    pub sa: Option<f64>,
    /// Moderator model slope on X
    #[arg(long, allow_hyphen_values = true)]
    pub sb: Option<f64>,
    /// `standard_normal`, `uniform LO HI` or `discrete L1,L2 P1,P2`
    #[arg(long)]
    pub x_model: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    pub u_alpha: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub u_kappa0: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub u_kappa1: Option<f64>,
    /// Rows per replication
    #[arg(long)]
    pub n: Option<usize>,
    /// Replications (default: 1000)
    #[arg(long)]
    pub reps: Option<usize>,
    /// Estimators (default: parallel-regression,controlled-interaction)
    #[arg(long, value_delimiter = ',')]
    pub methods: Vec<McEstimator>,
    #[arg(long)]
    pub level: Option<f64>,
    /// Also write the dataset drawn with the master seed to this CSV file
    #[arg(long)]
    pub emit_data: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SensitivityArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// Level-curve target as a fraction of the estimate (default: 0.5)
    #[arg(long)]
    pub fraction: Option<f64>,
    /// `START:STOP:STEP` or a comma list (default: 0:2:0.1)
    #[arg(long, allow_hyphen_values = true)]
    pub alpha_grid: Option<String>,
    /// Sweep this kappa_diff grid instead of tracing a level curve
    #[arg(long, allow_hyphen_values = true)]
    pub kappa_grid: Option<String>,
    /// symmetric or anchored
    #[arg(long)]
    pub split: Option<KappaSplit>,
    /// Level-curve tolerance on |adjusted − fraction·estimate| (default: 1e-4)
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Largest |kappa_diff| searched by the level curve
    #[arg(long)]
    pub max_kappa: Option<f64>,
    #[arg(long)]
    pub em_tolerance: Option<f64>,
    #[arg(long)]
    pub em_max_iter: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct DiagnoseArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// Propensity bound for the support check (default: 0.01)
    #[arg(long)]
    pub epsilon: Option<f64>,
}
