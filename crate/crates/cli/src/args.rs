//! Command-line definitions.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "dnumkit", version, about = "Multi-period rate allocation with average delay contracts")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve a scenario once over its full horizon.
    Solve(SolveArgs),
    /// Receding-horizon run with forecast capacities.
    Mpc(MpcArgs),
    /// Field-wise difference of two results files.
    Compare(CompareArgs),
    /// Check a scenario file and list every problem found.
    Validate(ValidateArgs),
    /// Write a generated scenario as JSON.
    Gen(GenArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Generator {
    Exp1,
    Exp2,
    Exp3,
    Tiny,
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioSource {
    /// Scenario JSON file.
    #[arg(long, conflicts_with_all = ["gen", "spec"])]
    pub scenario: Option<PathBuf>,
    /// Built-in generator.
    #[arg(long, value_enum, conflicts_with = "spec")]
    pub gen: Option<Generator>,
    /// Generator spec JSON (kind, seed, overrides).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Overrides the generator's desk-scale link count.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub links: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub sources: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub horizon: Option<u64>,
    /// Member of the tiny oracle family.
    #[arg(long, default_value_t = 0)]
    pub variant: usize,
    /// Use the original experiment sizes instead of the desk-scale ones.
    #[arg(long)]
    pub full: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SolverKind {
    Dual,
    Newton,
    Oracle,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    #[arg(long, value_enum, default_value_t = SolverKind::Newton)]
    pub solver: SolverKind,
    /// Dual step size, or `auto` for 1/Q.
    #[arg(long, value_parser = parse_gamma)]
    pub gamma: Option<Gamma>,
    /// Dual stopping threshold on the largest primal change.
    #[arg(long, value_parser = positive)]
    pub th: Option<f64>,
    /// Iteration cap (dual iterations or total Newton steps).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_iters: Option<u64>,
    #[arg(long, value_parser = positive)]
    pub mu_min: Option<f64>,
    #[arg(long, value_parser = positive)]
    pub lambda_max: Option<f64>,
    /// Shrink the dual step when running extremes violate the bound.
    #[arg(long)]
    pub adaptive: bool,
    /// Keep dual iterates in [0, λ_max] × [μ_min, ∞).
    #[arg(long)]
    pub box_projection: bool,
    /// Initial barrier weight.
    #[arg(long, value_parser = positive)]
    pub beta0: Option<f64>,
    /// Barrier gap at which the Newton solver stops.
    #[arg(long, value_parser = positive)]
    pub gap_tol: Option<f64>,
    /// Solve the Newton dual system densely instead of by splitting.
    #[arg(long)]
    pub direct: bool,
    /// Stationarity, contract and complementarity tolerance.
    #[arg(long, value_parser = positive)]
    pub tolerance: Option<f64>,
    /// Capacity feasibility tolerance.
    #[arg(long, value_parser = positive)]
    pub capacity_tolerance: Option<f64>,
    /// Grid spacing for the oracle solver.
    #[arg(long, value_parser = positive, default_value_t = 1e-3)]
    pub resolution: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Gamma {
    Fixed(f64),
    Auto,
}

fn parse_gamma(s: &str) -> Result<Gamma, String> {
    if s == "auto" {
        return Ok(Gamma::Auto);
    }
    positive(s).map(Gamma::Fixed)
}

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be a positive number (got {s})"))
    }
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub source: ScenarioSource,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Write trace.csv with one row per iteration.
    #[arg(long)]
    pub trace: bool,
    /// Record wall time in the report (makes output non-reproducible).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ForecastKind {
    /// Fixed per-link values from `--means`.
    Mean,
    /// Running average of the last `--window` realized periods.
    Running,
    /// The realized stream itself (reference runs only).
    Exact,
}

#[derive(Debug, Args)]
pub struct MpcArgs {
    #[command(flatten)]
    pub source: ScenarioSource,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, value_enum, default_value_t = ForecastKind::Mean)]
    pub forecast: ForecastKind,
    /// Comma-separated per-link forecast, 1-based link order.
    #[arg(long, value_delimiter = ',')]
    pub means: Option<Vec<f64>>,
    #[arg(long, default_value_t = 3)]
    pub window: usize,
    /// Realized capacities as CSV (`period,l1,...`); defaults to the scenario's.
    #[arg(long)]
    pub stream: Option<PathBuf>,
    /// Also solve with full knowledge and report the utility ratio.
    #[arg(long)]
    pub clairvoyant: bool,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Scenario for the utility gap; defaults to the one embedded in `--a`.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub source: ScenarioSource,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
