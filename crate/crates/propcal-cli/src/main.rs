//! Command-line interface: fit, cross-validate, estimate, diagnose,
//! simulate, and limiting-fit over CSV inputs.
//!
//! Exit codes: 0 on success (fits converged), 2 when a fit did not converge
//! (results are still written), 1 on I/O or validation errors with a
//! single-line `error: ...` message on stderr.

mod commands;
mod config;
mod output;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "propcal",
    version,
    about = "Calibrated and maximum-likelihood propensity score fitting, \
             IPW treatment effect estimation, diagnostics, and simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command that fits a model from a CSV file.
/// Any flag left unset falls back to the `--config` TOML file, then to the
/// built-in default.
#[derive(Args, Debug, Clone)]
pub struct FitFlags {
    /// Input CSV (header row; one treatment column; optional outcome column;
    /// remaining numeric columns are covariates).
    #[arg(long)]
    pub input: Option<std::path::PathBuf>,
    /// Name of the 0/1 treatment column.
    #[arg(long)]
    pub treatment: Option<String>,
    /// Name of the outcome column.
    #[arg(long)]
    pub outcome: Option<String>,
    /// Loss: ml | cal1 | cal0 | bal (estimate also accepts `cal` for the
    /// per-arm calibration pair).
    #[arg(long)]
    pub loss: Option<String>,
    /// Fixed penalty level; 0 fits without a penalty.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Select the penalty by K-fold cross-validation.
    #[arg(long)]
    pub cv: bool,
    #[arg(long)]
    pub cv_folds: Option<usize>,
    /// Per-octave subdivision of the penalty grid.
    #[arg(long)]
    pub grid_subdiv: Option<u32>,
    /// Grid depth: the grid spans lambda0 down to lambda0 * 2^(-depth/subdiv).
    #[arg(long)]
    pub grid_depth: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Standardize non-intercept design columns to mean 0, variance 1.
    #[arg(long)]
    pub standardize: bool,
    /// Add all pairwise interactions of the covariates.
    #[arg(long)]
    pub interactions: bool,
    /// Drop candidate columns with fewer nonzero raw values than this.
    #[arg(long)]
    pub min_nonzero: Option<usize>,
    /// TOML configuration file (flags override its values).
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    /// Prefix for all output files.
    #[arg(long)]
    pub out_prefix: Option<std::path::PathBuf>,
    /// Use the treated-arm cross-validated penalty for both arms
    /// (estimate only).
    #[arg(long)]
    pub shared_lambda: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    p: usize,
    /// correct | misspecified
    #[arg(long, default_value = "correct")]
    scenario: String,
    /// lin1 | lin2 | quad1 | quad2 | exp | noise
    #[arg(long, default_value = "lin1")]
    h_config: String,
    #[arg(long, default_value_t = 10)]
    reps: usize,
    /// Comma-separated subset of: true,const,ml,rml,cal,rcal
    #[arg(long, default_value = "true,const,ml,cal")]
    estimators: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    cv_folds: usize,
    #[arg(long, default_value_t = 1)]
    grid_subdiv: u32,
    #[arg(long, default_value_t = 10)]
    grid_depth: u32,
    #[arg(long)]
    out_prefix: std::path::PathBuf,
}

#[derive(Args, Debug)]
struct DiagnoseArgs {
    #[command(flatten)]
    fit: FitFlags,
    /// Re-ingest fitted propensities from a `*.pi.csv` file instead of
    /// fitting.
    #[arg(long)]
    pi_file: Option<std::path::PathBuf>,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    fit: FitFlags,
    /// Re-ingest treated-arm propensities instead of fitting them.
    #[arg(long)]
    pi1_file: Option<std::path::PathBuf>,
    /// Re-ingest untreated-arm propensities instead of fitting them.
    #[arg(long)]
    pi0_file: Option<std::path::PathBuf>,
}

#[derive(Args, Debug)]
struct LimitingArgs {
    /// Number of quantile-spaced design points.
    #[arg(long, default_value_t = 400)]
    n: usize,
    #[arg(long)]
    out_prefix: std::path::PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a propensity model at a fixed penalty (or none).
    Fit(FitFlags),
    /// Cross-validate the penalty, then fit at the selected value.
    #[command(name = "cross-validate", alias = "cv")]
    CrossValidate(FitFlags),
    /// Fit per-arm propensities and estimate means, ATE, and ATT.
    Estimate(EstimateArgs),
    /// Covariate balance and weight diagnostics.
    Diagnose(DiagnoseArgs),
    /// Monte Carlo comparison of propensity estimators.
    Simulate(SimulateArgs),
    /// Deterministic limiting-propensity experiment on a fixed design.
    #[command(name = "limiting-fit")]
    LimitingFit(LimitingArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Fit(flags) => commands::fit(&flags),
        Command::CrossValidate(mut flags) => {
            flags.cv = true;
            commands::fit(&flags)
        }
        Command::Estimate(args) => {
            commands::estimate(&args.fit, args.pi1_file.as_deref(), args.pi0_file.as_deref())
        }
        Command::Diagnose(args) => commands::diagnose(&args.fit, args.pi_file.as_deref()),
        Command::Simulate(args) => commands::simulate(
            args.n,
            args.p,
            &args.scenario,
            &args.h_config,
            args.reps,
            &args.estimators,
            args.seed,
            args.cv_folds,
            args.grid_subdiv,
            args.grid_depth,
            &args.out_prefix,
        ),
        Command::LimitingFit(args) => commands::limiting_fit(args.n, &args.out_prefix),
    };
    match outcome {
        Ok(converged) => {
            if converged {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            // single machine-parsable line
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
