use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

/// Fit latent-variable mixtures by EM and compute Laplace posteriors.
///
/// `EMLAPLACE_SEED` is reserved for future stochastic features and is
/// currently ignored.
#[derive(Debug, Parser)]
#[command(name = "emlaplace", version, about, long_about = None)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit by EM and report the stopping point.
    Fit(FitArgs),
    /// Fit by EM, then compute the Laplace posterior and evidence at the mode.
    Laplace(LaplaceArgs),
    /// Fit by EM, then cross-check derivatives and evidence against reference oracles.
    Check(CheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// One-dimensional Gaussian mixture with fixed weights and variances; fits the means.
    Gmm,
    /// Mixture of binomial coins with fixed weights; fits the log-odds.
    Coin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Dual,
    Complex,
    Fd,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum)]
    pub model: ModelKind,

    /// Number of mixture components K.
    #[arg(long, default_value_t = 1)]
    pub components: usize,

    /// Mixing weights, comma separated (default: uniform).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub weights: Option<Vec<f64>>,

    /// Component variances for `gmm`, comma separated (default: all 1).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub variances: Option<Vec<f64>>,

    /// Prior means, one value for all components or one per component (default: 0).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub prior_mean: Option<Vec<f64>>,

    /// Prior variances, one value or one per component (default: 1e12, effectively flat).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub prior_var: Option<Vec<f64>>,

    /// Data file: one real per line for `gmm`, `successes,trials` per line for `coin`.
    #[arg(long)]
    pub data: PathBuf,

    /// Starting parameters (default: data quantiles for `gmm`, evenly spaced
    /// log-odds in [-1, 1] for `coin`).
    #[arg(
        long,
        visible_alias = "init-means",
        visible_alias = "init-log-odds",
        value_delimiter = ',',
        allow_hyphen_values = true
    )]
    pub init: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Args)]
pub struct EmArgs {
    #[arg(long, default_value_t = 100_000)]
    pub max_iters: usize,

    /// Stop when an iteration raises the log joint by less than this.
    #[arg(long, default_value_t = f64::MIN_POSITIVE)]
    pub tol_loglik: f64,

    /// Stop when the max-norm parameter step falls below this.
    #[arg(long, default_value_t = 1e-12)]
    pub tol_param: f64,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Omit wall-clock timings so reports are byte-reproducible.
    #[arg(long)]
    pub no_timings: bool,

    /// Worker threads for Hessian assembly (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub em: EmArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct LaplaceArgs {
    #[command(flatten)]
    pub fit: FitArgs,

    /// How Hessian-vector products are differentiated.
    #[arg(long, value_enum, default_value_t = StrategyArg::Dual)]
    pub strategy: StrategyArg,
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub laplace: LaplaceArgs,

    /// Also compare the Laplace evidence with grid quadrature (at most 2 parameters).
    #[arg(long)]
    pub quadrature: bool,

    /// Quadrature points per axis; odd.
    #[arg(long, default_value_t = 20_001)]
    pub quad_points: usize,

    /// Add this offset to every gradient coordinate before the gradient check.
    #[arg(
        long,
        default_value_t = 0.0,
        allow_negative_numbers = true,
        hide = true
    )]
    pub perturb_grad: f64,

    /// Print the JSON report instead of the pass/fail lines.
    #[arg(long)]
    pub json: bool,
}
