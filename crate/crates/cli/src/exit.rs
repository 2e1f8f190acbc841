//! Exit codes and the JSON error record written to stderr.

use taxopt::backtest::BacktestError;
use taxopt::conic::SolverError;
use taxopt::io::IoError;
use taxopt::oracle::OracleError;
use taxopt::tam::TamError;

pub const INPUT: i32 = 2;
pub const INFEASIBLE: i32 = 3;
pub const SOLVER: i32 = 4;

/// Bad command-line input detected by the CLI itself.
#[derive(Debug)]
pub struct InputError(pub String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn tam_code(e: &TamError) -> i32 {
    match e {
        TamError::Infeasible(_) => INFEASIBLE,
        TamError::Solver(_) => SOLVER,
        TamError::Backend(SolverError::UnknownBackend(_)) => INPUT,
        TamError::Backend(_) => SOLVER,
        TamError::Validation(_) | TamError::Ledger(_) | TamError::Piece(_) => INPUT,
    }
}

pub fn classify(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<TamError>() {
            return tam_code(e);
        }
        if let Some(e) = cause.downcast_ref::<IoError>() {
            return match e {
                IoError::Problem(t) => tam_code(t),
                _ => INPUT,
            };
        }
        if let Some(e) = cause.downcast_ref::<BacktestError>() {
            return match e {
                BacktestError::Solve { source, .. } => tam_code(source),
                _ => INPUT,
            };
        }
        if let Some(e) = cause.downcast_ref::<OracleError>() {
            return match e {
                OracleError::Tam(t) => tam_code(t),
                _ => INPUT,
            };
        }
        if let Some(e) = cause.downcast_ref::<SolverError>() {
            return match e {
                SolverError::UnknownBackend(_) => INPUT,
                SolverError::Setup(_) => SOLVER,
            };
        }
        if cause.downcast_ref::<InputError>().is_some() {
            return INPUT;
        }
    }
    INPUT
}

pub fn error_record(err: &anyhow::Error, code: i32) -> String {
    let kind = match code {
        INFEASIBLE => "infeasible",
        SOLVER => "solver_failure",
        _ => "input_error",
    };
    serde_json::json!({
        "error": kind,
        "code": code,
        "message": format!("{err:#}"),
    })
    .to_string()
}
