use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result, bail};
use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod exit;

#[derive(Parser, Debug)]
#[command(name = "taxopt", version, about = "Tax-aware portfolio rebalancing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rebalance one account with the relax-and-round heuristic.
    Solve(SolveArgs),
    /// Run a monthly rebalancing simulation over a market directory.
    Backtest(BacktestArgs),
    /// Tabulate the liability, the separable cost and their envelopes for one asset.
    Envelope(EnvelopeArgs),
    /// Heuristic against the exact enumeration and the relaxation bound.
    Compare(CompareArgs),
    /// Write a synthetic market or instance directory.
    GenData(GenDataArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Det,
    Rand,
}

/// Overrides of the trade-off and tax parameters.
#[derive(Args, Debug, Clone, Default)]
pub struct Tuning {
    /// Cash target as a fraction of account value.
    #[arg(long)]
    pub eta: Option<f64>,
    /// Risk aversion; the risk weight is this value divided by account value.
    #[arg(long = "gamma-risk")]
    pub gamma_risk: Option<f64>,
    #[arg(long = "gamma-tc")]
    pub gamma_tc: Option<f64>,
    #[arg(long = "gamma-tax")]
    pub gamma_tax: Option<f64>,
    #[arg(long = "rho-lt")]
    pub rho_lt: Option<f64>,
    #[arg(long = "rho-st")]
    pub rho_st: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct Rounding {
    /// Sign rounding: deterministic or randomized.
    #[arg(long, value_enum, default_value = "rand")]
    pub mode: ModeArg,
    /// Randomized sign patterns to try.
    #[arg(long, default_value_t = 1)]
    pub candidates: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    /// Instance directory.
    #[arg(long)]
    pub input: PathBuf,
    /// Directory for trades.csv, holdings.csv and report.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replace the cash balance from params.csv.
    #[arg(long)]
    pub cash: Option<f64>,
    #[command(flatten)]
    pub rounding: Rounding,
    #[command(flatten)]
    pub tuning: Tuning,
}

#[derive(Args, Debug)]
pub struct BacktestArgs {
    /// Market directory; an optional lots.csv holds the opening lots.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Opening cash.
    #[arg(long, default_value_t = 1_000_000.0)]
    pub cash: f64,
    #[arg(long)]
    pub start: Option<chrono::NaiveDate>,
    #[arg(long)]
    pub end: Option<chrono::NaiveDate>,
    #[arg(long, default_value_t = 0.0005)]
    pub kappa: f64,
    #[command(flatten)]
    pub rounding: Rounding,
    #[command(flatten)]
    pub tuning: Tuning,
}

#[derive(Args, Debug)]
pub struct EnvelopeArgs {
    /// Instance directory.
    #[arg(long)]
    pub input: PathBuf,
    /// Asset to tabulate; defaults to the first asset holding a loss lot.
    #[arg(long)]
    pub asset: Option<String>,
    /// Number of grid points.
    #[arg(long, default_value_t = 1001)]
    pub grid: usize,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub cash: Option<f64>,
    #[command(flatten)]
    pub tuning: Tuning,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Instance directory; random instances are generated when omitted.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub instances: usize,
    #[arg(long, default_value_t = 30)]
    pub n: usize,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Loss-lot assets per generated instance are drawn from 0 to this value.
    #[arg(long = "loss-assets", default_value_t = 10)]
    pub loss_assets: usize,
    /// Enumeration is refused above this many loss-lot assets.
    #[arg(long = "oracle-max-m", default_value_t = taxopt::oracle::DEFAULT_MAX_LOSS_ASSETS)]
    pub oracle_max_m: usize,
    #[arg(long)]
    pub cash: Option<f64>,
    #[command(flatten)]
    pub rounding: Rounding,
    #[command(flatten)]
    pub tuning: Tuning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DataKind {
    Market,
    Instance,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(value_enum)]
    pub kind: DataKind,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 30)]
    pub n: usize,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Market length in months.
    #[arg(long, default_value_t = 72)]
    pub months: u32,
    #[arg(long = "non-members", default_value_t = 0)]
    pub non_members: usize,
    #[arg(long, default_value_t = 0)]
    pub delistings: usize,
    #[arg(long = "loss-assets", default_value_t = 3)]
    pub loss_assets: usize,
    #[arg(long = "buy-restricted", default_value_t = 0)]
    pub buy_restricted: usize,
    /// Account value of a generated instance.
    #[arg(long, default_value_t = 1_000_000.0)]
    pub cash: f64,
}

fn ensure_dir(path: &Path) -> Result<()> {
    if !path.is_dir() {
        bail!(exit::InputError(format!("{} is not a directory", path.display())));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let solver = taxopt::conic::solver_from_env().context("selecting the solver backend")?;
    match cli.command {
        Command::Solve(a) => {
            ensure_dir(&a.input)?;
            commands::solve(&a, solver.as_ref())
        }
        Command::Backtest(a) => {
            ensure_dir(&a.input)?;
            commands::backtest(&a, solver.as_ref())
        }
        Command::Envelope(a) => {
            ensure_dir(&a.input)?;
            commands::envelope(&a)
        }
        Command::Compare(a) => {
            if let Some(dir) = &a.input {
                ensure_dir(dir)?;
            }
            commands::compare(&a, solver.as_ref())
        }
        Command::GenData(a) => commands::gen_data(&a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = exit::classify(&err);
            eprintln!("{}", exit::error_record(&err, code));
            ExitCode::from(code as u8)
        }
    }
}
