//! `tracefit`: fit, compare and simulate detectee-count distributions from
//! contact tracing.
//!
//! Exit codes: 0 success, 1 numerical or model failure, 2 usage error,
//! 3 fit ended at a boundary or did not converge.

mod commands;
mod io;
mod specs;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Io(String),
    Model(tracefit_core::Error),
    /// The command finished and wrote its output, but the fit is not an
    /// interior maximum.
    NotConverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::NotConverged(_) => 3,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Data(m) => write!(f, "data: {m}"),
            CliError::Io(m) => write!(f, "io: {m}"),
            CliError::Model(e) => write!(f, "{e}"),
            CliError::NotConverged(m) => write!(f, "{m}"),
        }
    }
}

impl From<tracefit_core::Error> for CliError {
    fn from(e: tracefit_core::Error) -> Self {
        CliError::Model(e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "tracefit", version, about = "Contact-tracing detectee distributions: fitting, comparison and simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read a detectees,frequency CSV and write its canonical form.
    Ingest(IngestArgs),
    /// Maximum likelihood fit of one degree family.
    Fit(FitArgs),
    /// Fit several families and rank them by AIC.
    Compare(CompareArgs),
    /// Refit one family over a grid of reproduction numbers.
    Sensitivity(SensitivityArgs),
    /// Agent-based simulation of an epidemic with contact tracing.
    Simulate(SimulateArgs),
    /// Theoretical detectee pmf.
    Pmf(PmfArgs),
    /// Binned chi-square goodness of fit.
    Gof(GofArgs),
    /// Empirical and theoretical cumulative distributions.
    Cdf(CdfArgs),
    /// Repeat the run recorded in a manifest.
    Rerun(RerunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Fit(_) => "fit",
            Command::Compare(_) => "compare",
            Command::Sensitivity(_) => "sensitivity",
            Command::Simulate(_) => "simulate",
            Command::Pmf(_) => "pmf",
            Command::Gof(_) => "gof",
            Command::Cdf(_) => "cdf",
            Command::Rerun(_) => "rerun",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct IngestArgs {
    /// CSV path, or `bundled:karnataka`.
    pub path: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Options shared by the fitting commands.
#[derive(Debug, Args, Serialize)]
pub struct FitSettings {
    /// `forward` or `full`.
    #[arg(long, default_value = "forward")]
    pub mode: String,
    /// Power-law degree truncation.
    #[arg(long, default_value_t = tracefit_core::inference::FIT_POWER_LAW_KMAX)]
    pub kmax: u32,
    /// Simplex convergence tolerance on the log-likelihood spread.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    /// Seed for the random restarts.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    /// CSV path, or `bundled:karnataka`.
    #[arg(long)]
    pub data: String,
    /// randommix, fixed, poisson, geometric, powerlaw or negbinom.
    #[arg(long)]
    pub family: String,
    #[arg(long)]
    pub r0: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub settings: FitSettings,
    /// Report path (TOML); printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct CompareArgs {
    #[arg(long)]
    pub data: String,
    #[arg(long)]
    pub r0: f64,
    /// `all` or a comma-separated list of families.
    #[arg(long, default_value = "all")]
    pub families: String,
    #[command(flatten)]
    #[serde(flatten)]
    pub settings: FitSettings,
    /// CSV path for the comparison table.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SensitivityArgs {
    #[arg(long)]
    pub data: String,
    #[arg(long)]
    pub family: String,
    /// Inclusive grid `lo:hi:step`.
    #[arg(long)]
    pub r0_grid: String,
    #[command(flatten)]
    #[serde(flatten)]
    pub settings: FitSettings,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Per-edge contact rate.
    #[arg(long, default_value_t = 1.5)]
    pub beta: f64,
    /// Unobserved recovery rate.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Diagnosis rate.
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    /// Tracing success probability.
    #[arg(long, default_value_t = 0.6)]
    pub p: f64,
    /// Downstream degree, e.g. `poisson:4`, `fixed:4`, `negbinom:0.16:4.5`.
    #[arg(long, default_value = "poisson:4")]
    pub degree: String,
    /// `tree` or `config:N`.
    #[arg(long, default_value = "tree")]
    pub graph: String,
    #[arg(long, default_value = "full")]
    pub mode: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Stop once this many nodes have been infected (per replicate).
    #[arg(long)]
    pub max_infected: Option<usize>,
    /// Stop once this many index cases have been recorded (per replicate).
    #[arg(long)]
    pub max_index_cases: Option<usize>,
    /// Stop at this time.
    #[arg(long)]
    pub max_time: Option<f64>,
    /// Diagnosis window `t0:t1` for recorded index cases.
    #[arg(long)]
    pub window: Option<String>,
    /// Independent replicates, pooled in order.
    #[arg(long, default_value_t = 1)]
    pub replicates: u64,
    /// Per-index-case records CSV.
    #[arg(long)]
    pub records: Option<PathBuf>,
    /// Detectee histogram CSV; printed to stdout when neither output is given.
    #[arg(long)]
    pub histogram: Option<PathBuf>,
}

/// A model given either by a fit report or by explicit parameters.
#[derive(Debug, Args, Serialize)]
pub struct ModelArgs {
    /// Fit report written by `tracefit fit`.
    #[arg(long, conflicts_with_all = ["degree", "r0", "beta"])]
    pub fit: Option<PathBuf>,
    /// Degree model, e.g. `negbinom:0.16:4.5`.
    #[arg(long)]
    pub degree: Option<String>,
    /// Reproduction number; rates are set with alpha = sigma = 0.5.
    #[arg(long, conflicts_with_all = ["beta", "alpha", "sigma"])]
    pub r0: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    /// Tracing success probability.
    #[arg(long)]
    pub p: Option<f64>,
    /// Defaults to the fit's mode, or `forward`.
    #[arg(long)]
    pub mode: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct PmfArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    /// Last detectee count to emit; chosen from the tail mass when absent.
    #[arg(long)]
    pub imax: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct GofArgs {
    #[arg(long)]
    pub data: String,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    /// Fitted parameter count; defaults to that of the degree family.
    #[arg(long)]
    pub n_params: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct CdfArgs {
    #[arg(long)]
    pub data: String,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct RerunArgs {
    pub manifest: PathBuf,
}

fn configure_threads() {
    if let Some(n) = std::env::var("TRACEFIT_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            // fails only if a pool already exists, which is harmless
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

fn main() -> ExitCode {
    configure_threads();
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::run(cli.command, &argv[1..]) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
