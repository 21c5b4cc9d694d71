//! `hoij`: fits, Taylor expansions, approximate cross-validation, bootstrap
//! covariances, error bounds, term tables and scaling studies from the
//! command line. All output is JSON (plus optional CSV).

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use hoij_core::MAX_ORDER;

pub const SCHEMA_VERSION: &str = "1";

#[derive(Parser, Debug)]
#[command(name = "hoij", version, about = "Higher-order infinitesimal jackknife")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the base problem and report θ̂, Ĥ and the sandwich covariance.
    Fit(FitArgs),
    /// Taylor expansions θIJ^k for each weight vector of a scheme.
    Expand(SchemeArgs),
    /// Approximate vs exact cross-validation.
    Cv(CvArgs),
    /// Bootstrap covariance of θIJ^K against the sandwich estimator.
    Bootstrap(BootstrapArgs),
    /// Constants, condition check and error bounds.
    Bounds(BoundsArgs),
    /// Dump the derivative term tables.
    Terms(TermsArgs),
    /// Max leave-one-out error against N on synthetic data.
    Scaling(ScalingArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum Format {
    Csv,
    Json,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
enum SchemeKind {
    Loo,
    Kfold,
    Kappa,
    Bootstrap,
}

fn parse_order(s: &str) -> Result<usize, String> {
    let k: usize = s.parse().map_err(|e| format!("{e}"))?;
    if k > MAX_ORDER {
        return Err(format!("order {k} exceeds the maximum {MAX_ORDER}"));
    }
    Ok(k)
}

fn parse_rho(s: &str) -> Result<f64, String> {
    let r: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if r > 0.0 && r < 1.0 {
        Ok(r)
    } else {
        Err(format!("rho must lie strictly between 0 and 1, got {r}"))
    }
}

fn parse_nonneg(s: &str) -> Result<f64, String> {
    let r: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if r >= 0.0 && r.is_finite() {
        Ok(r)
    } else {
        Err(format!("expected a finite nonnegative number, got {r}"))
    }
}

fn parse_positive(s: &str) -> Result<usize, String> {
    let n: usize = s.parse().map_err(|e| format!("{e}"))?;
    if n == 0 {
        return Err("must be at least 1".into());
    }
    Ok(n)
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Registered model id: mean, linear_regression, logistic_regression, exp_loss.
    #[arg(long)]
    model: String,
    /// CSV (response in the last column) or JSON rows `{"x": [...], "y": ...}`.
    #[arg(long)]
    data: PathBuf,
    /// Defaults to the file extension.
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// The CSV file starts with a header row.
    #[arg(long)]
    header: bool,
    /// Ridge strength added as g₀(θ) = l2·θ.
    #[arg(long, default_value_t = 0.0, value_parser = parse_nonneg)]
    l2: f64,
}

#[derive(Args, Debug, Clone)]
struct OutArgs {
    /// JSON output path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct WeightArgs {
    #[arg(long, value_enum, default_value_t = SchemeKind::Loo)]
    scheme: SchemeKind,
    /// Zero-based rows to leave out one at a time (loo only); all rows by default.
    #[arg(long, value_delimiter = ',')]
    subset: Option<Vec<usize>>,
    #[arg(long, default_value_t = 5, value_parser = parse_positive)]
    folds: usize,
    #[arg(long, default_value_t = 1, value_parser = parse_positive)]
    kappa: usize,
    /// Number of leave-kappa-out subsets.
    #[arg(long, default_value_t = 100, value_parser = parse_positive)]
    count: usize,
    #[arg(long, default_value_t = 1000, value_parser = parse_positive)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Clone)]
struct SamplerArgs {
    #[arg(long, default_value_t = 0.5, value_parser = parse_rho)]
    rho: f64,
    /// Sampler radius around θ̂; defaults to 2·C_op·δ_0.
    #[arg(long, value_parser = parse_nonneg)]
    radius: Option<f64>,
    #[arg(long, default_value_t = 256, value_parser = parse_positive)]
    samples: usize,
    /// Add ε·M_k to each δ_k.
    #[arg(long)]
    epsilon_term: bool,
    #[arg(long, default_value_t = 1e-3, value_parser = parse_nonneg)]
    epsilon: f64,
}

#[derive(Args, Debug, Clone)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug, Clone)]
struct SchemeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 2, value_parser = parse_order)]
    order: usize,
    #[command(flatten)]
    weights: WeightArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug, Clone)]
struct CvArgs {
    #[command(flatten)]
    base: SchemeArgs,
    /// Attach error bounds to the summary.
    #[arg(long)]
    with_bounds: bool,
    #[command(flatten)]
    sampler: SamplerArgs,
    /// Flat CSV output, one row per weight and order.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value_t = 1, value_parser = parse_positive)]
    workers: usize,
    /// Record per-weight wall-clock times (output is then not reproducible).
    #[arg(long)]
    timings: bool,
}

#[derive(Args, Debug, Clone)]
struct BootstrapArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 1, value_parser = parse_order)]
    order: usize,
    #[arg(long, default_value_t = 1000, value_parser = parse_positive)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also refit exactly at every draw.
    #[arg(long)]
    refit: bool,
    #[arg(long, default_value_t = 1, value_parser = parse_positive)]
    workers: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug, Clone)]
struct BoundsArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 2, value_parser = parse_order)]
    order: usize,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Check ‖H(w̃)⁻¹‖ ≤ C̃_op along every leave-one-out segment.
    #[arg(long)]
    check_segments: bool,
    /// Points per segment for --check-segments.
    #[arg(long, default_value_t = 8, value_parser = parse_positive)]
    segment_points: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug, Clone)]
struct TermsArgs {
    #[arg(long, visible_alias = "order", default_value_t = 3, value_parser = parse_order)]
    max_order: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug, Clone)]
struct ScalingArgs {
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = 2, value_parser = parse_order)]
    order: usize,
    /// Comma-separated, strictly increasing N values.
    #[arg(long, value_delimiter = ',', default_values_t = [50usize, 100, 200, 400, 800])]
    grid: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Covariates per row (ignored by the mean model).
    #[arg(long, default_value_t = 2, value_parser = parse_positive)]
    dim: usize,
    #[arg(long, default_value_t = 0.5, value_parser = parse_nonneg)]
    noise: f64,
    #[arg(long, default_value_t = 0.0, value_parser = parse_nonneg)]
    l2: f64,
    #[arg(long, default_value_t = 1, value_parser = parse_positive)]
    workers: usize,
    #[command(flatten)]
    out: OutArgs,
}

/// A usage error found after parsing; reported through clap so the exit
/// code and formatting match parse failures.
fn usage_error(msg: impl std::fmt::Display) -> ! {
    Cli::command()
        .error(clap::error::ErrorKind::ValueValidation, msg)
        .exit()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = commands::validate(&cli.command) {
        usage_error(msg);
    }
    match commands::run(cli.command) {
        Ok(summary) => {
            eprintln!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
