//! Batch command line around `vsmile-core`: synthetic markets, forward
//! variance extraction, pricing, calibration, backtests and roughness
//! diagnostics. Every artifact carries the run's config hash and seed.

mod artifacts;
mod commands;
mod config;
pub mod svg;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use vsmile_core::calibration::{Horizon, ObjectiveKind};
use vsmile_core::KernelKind;

pub use artifacts::{Artifacts, HASH_PREFIX};
pub use config::{CommandConfig, RunConfig};

/// Default Monte Carlo path count of the command line.
pub const DEFAULT_PATHS: usize = 1 << 13;
pub const DEFAULT_SEED: u64 = 20171023;
/// Caps the worker pool.
pub const THREADS_ENV: &str = "VSMILE_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{message}")]
    Failed { code: &'static str, message: String },
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Failed { code, .. } => code,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed { .. } => 1,
        }
    }

    /// One-line JSON for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.code(), "message": self.to_string() }).to_string()
    }

    pub(crate) fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        CliError::Failed { code: "io", message: format!("{}: {e}", path.display()) }
    }
}

impl From<vsmile_core::Error> for CliError {
    fn from(e: vsmile_core::Error) -> Self {
        CliError::Failed { code: e.code(), message: e.to_string() }
    }
}

/// Prefixes a core error with where it happened.
pub(crate) fn context(ctx: impl std::fmt::Display) -> impl FnOnce(vsmile_core::Error) -> CliError {
    move |e| CliError::Failed { code: e.code(), message: format!("{ctx}: {e}") }
}

#[derive(Debug, Parser)]
#[command(name = "vsmile", version, about = "Volterra Bergomi smile toolkit")]
pub struct Cli {
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Monte Carlo paths (even; antithetic pairs).
    #[arg(long, global = true, default_value_t = DEFAULT_PATHS)]
    pub paths: usize,
    /// Moneyness filter CSV (below_years,k_min,k_max); defaults to the standard table.
    #[arg(long, global = true)]
    pub filter_table: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct ModelArgs {
    /// Model kind; repeat for several. Unset parameters take the kind's reference values.
    #[arg(long = "model", value_parser = parse_kind)]
    pub models: Vec<KernelKind>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub rho: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub h: Option<f64>,
    #[arg(long)]
    pub eta_l: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub h_l: Option<f64>,
}

#[derive(Debug, Args, Clone)]
pub struct CurveArgs {
    /// Flat forward variance level.
    #[arg(long, default_value_t = 0.04)]
    pub xi: f64,
    /// Forward variance curve CSV; overrides --xi.
    #[arg(long)]
    pub fvc: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic market chain from a model.
    Synth {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        curve: CurveArgs,
        #[arg(long, default_value = "2017-10-23")]
        date: chrono::NaiveDate,
        /// Number of consecutive working days to emit.
        #[arg(long, default_value_t = 1)]
        days: usize,
        /// Daily relative change of the forward variance level.
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        xi_drift: f64,
        #[arg(long, default_value_t = 100.0)]
        forward: f64,
        /// Comma-separated maturities in years (fractions like 1/52 allowed).
        #[arg(long, value_delimiter = ',', value_parser = parse_years)]
        maturities: Vec<f64>,
        /// Quotes per maturity, evenly spaced over the filter band.
        #[arg(long, default_value_t = 9)]
        strikes: usize,
        /// Half bid/ask spread in vol points; 0 omits bid and ask.
        #[arg(long, default_value_t = 0.0)]
        spread: f64,
    },
    /// Extract forward variance curves from a chain.
    Fvc {
        #[arg(long)]
        chain: PathBuf,
    },
    /// Price a model implied-volatility surface.
    Surface {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        curve: CurveArgs,
        /// Quote grid (and date) taken from this chain.
        #[arg(long)]
        chain: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', value_parser = parse_years)]
        maturities: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        ks: Vec<f64>,
        #[arg(long, default_value = "2017-10-23")]
        date: chrono::NaiveDate,
    },
    /// Calibrate models to each day of a chain.
    Calibrate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        chain: PathBuf,
        /// Use this curve on every day instead of extracting one per day.
        #[arg(long)]
        fvc: Option<PathBuf>,
        #[arg(long, default_value = "short", value_parser = parse_horizon)]
        horizon: Horizon,
        #[arg(long, default_value = "surface", value_parser = parse_objective)]
        objective: ObjectiveKind,
        #[arg(long, default_value_t = 3200)]
        budget: usize,
        #[arg(long, default_value_t = 8)]
        starts: usize,
    },
    /// ATM skew term structures.
    Skew {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        curve: CurveArgs,
        #[arg(long, value_delimiter = ',', value_parser = parse_years)]
        maturities: Vec<f64>,
        /// Add finite-difference Monte Carlo skews.
        #[arg(long)]
        mc: bool,
        /// Add market skews from a single-date chain.
        #[arg(long)]
        chain: Option<PathBuf>,
    },
    /// Hold calibrated parameters fixed and track the surface error.
    Backtest {
        #[arg(long)]
        chain: PathBuf,
        /// Calibration JSON lines.
        #[arg(long)]
        calibration: PathBuf,
        #[arg(long)]
        fvc: Option<PathBuf>,
        #[arg(long, default_value_t = vsmile_core::backtest::DEFAULT_HORIZON_DAYS)]
        horizon_days: usize,
        /// Also record the anchor day itself.
        #[arg(long)]
        include_anchor: bool,
    },
    /// Realized-volatility roughness of simulated paths and skew power laws.
    Roughness {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 0.04)]
        xi: f64,
        #[arg(long, default_value_t = 10)]
        years: usize,
        /// Use RV levels instead of log RV.
        #[arg(long)]
        raw_levels: bool,
        /// Overlapping lags in the q-variation.
        #[arg(long)]
        overlapping: bool,
        /// Skew curve CSV for power-law fits.
        #[arg(long)]
        skew: Option<PathBuf>,
        /// Fixed regime cutoff for the power-law fit; swept when absent.
        #[arg(long)]
        tau: Option<f64>,
    },
}

fn parse_kind(s: &str) -> Result<KernelKind, String> {
    s.parse().map_err(|e: vsmile_core::Error| e.to_string())
}

fn parse_horizon(s: &str) -> Result<Horizon, String> {
    s.parse().map_err(|e: vsmile_core::Error| e.to_string())
}

fn parse_objective(s: &str) -> Result<ObjectiveKind, String> {
    s.parse().map_err(|e: vsmile_core::Error| e.to_string())
}

/// Years as a decimal or a fraction such as `1/52`.
pub fn parse_years(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|e| format!("'{s}': {e}"))?;
            let b: f64 = b.trim().parse().map_err(|e| format!("'{s}': {e}"))?;
            a / b
        }
        None => s.parse().map_err(|e| format!("'{s}': {e}"))?,
    };
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("maturity must be positive, got '{s}'"))
    }
}

/// Sizes the global worker pool from [`THREADS_ENV`]. A pool that already
/// exists is kept.
pub fn init_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV} must be a positive integer, got '{raw}'")))?;
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Validates the parsed command line and runs it.
pub fn run(cli: Cli) -> Result<(), CliError> {
    init_threads()?;
    let config = RunConfig::from_cli(cli)?;
    commands::execute(&config)
}

/// Parses `args` (program name first) and runs; help requests surface as usage errors.
pub fn run_from_args<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Usage(e.to_string()))?;
    run(cli)
}
