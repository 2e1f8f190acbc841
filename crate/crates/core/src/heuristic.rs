//! Two-stage heuristic: solve the relaxation, guess a sign per asset, then
//! solve the convex problem with those signs imposed.

use std::time::Instant;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conic::ConicSolver;
use crate::relaxation::{RelaxationSolution, solve_relaxation};
use crate::tam::{Method, SolveReport, TamError, TamProblemData, TradeList, solve_sign_constrained};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoundingMode {
    Deterministic,
    Randomized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundingConfig {
    pub mode: RoundingMode,
    pub candidates: usize,
    pub rng_seed: u64,
    pub fallback_to_deterministic: bool,
}

impl Default for RoundingConfig {
    fn default() -> Self {
        Self {
            mode: RoundingMode::Randomized,
            candidates: 1,
            rng_seed: 0,
            fallback_to_deterministic: true,
        }
    }
}

/// `sign(u)`, with `sign(0) = +1`.
pub fn deterministic_signs(u_relax: &[f64]) -> Vec<i8> {
    u_relax.iter().map(|&u| if u < 0.0 { -1 } else { 1 }).collect()
}

/// Independent draws with `P(z_i = +1) = theta_i`, consumed in index order.
pub fn randomized_signs<R: RngExt + ?Sized>(thetas: &[f64], rng: &mut R) -> Vec<i8> {
    thetas
        .iter()
        .map(|&t| if rng.random::<f64>() < t { 1 } else { -1 })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeuristicOutcome {
    pub trade: TradeList,
    pub report: SolveReport,
    pub relaxation: RelaxationSolution,
    pub signs: Vec<i8>,
    /// Utility of each candidate, `None` where its sign pattern was infeasible.
    pub candidate_utilities: Vec<Option<f64>>,
    pub fallback_used: bool,
}

type Candidate = Result<(TradeList, SolveReport), TamError>;

fn best_of(results: Vec<Candidate>) -> (Option<(usize, TradeList, SolveReport)>, Vec<Option<f64>>, Option<TamError>) {
    let mut best: Option<(usize, TradeList, SolveReport)> = None;
    let mut utilities = Vec::with_capacity(results.len());
    let mut last_err = None;
    for (k, r) in results.into_iter().enumerate() {
        match r {
            Ok((trade, report)) => {
                utilities.push(Some(report.utility));
                if best.as_ref().is_none_or(|(_, _, b)| report.utility > b.utility) {
                    best = Some((k, trade, report));
                }
            }
            Err(e) => {
                utilities.push(None);
                last_err = Some(e);
            }
        }
    }
    (best, utilities, last_err)
}

pub fn heuristic_solve(
    data: &TamProblemData,
    cfg: &RoundingConfig,
    solver: &dyn ConicSolver,
) -> Result<HeuristicOutcome, TamError> {
    if cfg.candidates == 0 {
        return Err(TamError::Validation(vec!["candidates must be at least 1".into()]));
    }
    let start = Instant::now();
    let relaxation = solve_relaxation(data, solver)?;
    let det = deterministic_signs(&relaxation.u_relax);
    let patterns: Vec<Vec<i8>> = match cfg.mode {
        RoundingMode::Deterministic => vec![det.clone()],
        RoundingMode::Randomized => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
            (0..cfg.candidates)
                .map(|_| randomized_signs(&relaxation.thetas, &mut rng))
                .collect()
        }
    };
    let results: Vec<Candidate> = patterns
        .par_iter()
        .map(|z| solve_sign_constrained(data, z, solver))
        .collect();
    let mut solves = 1 + patterns.len();
    let (mut best, candidate_utilities, mut err) = best_of(results);
    let mut method = match cfg.mode {
        RoundingMode::Deterministic => Method::HeuristicDeterministic,
        RoundingMode::Randomized => Method::HeuristicRandomized,
    };
    let mut fallback_used = false;
    let mut signs = best.as_ref().map(|(k, _, _)| patterns[*k].clone());
    if best.is_none() && cfg.mode == RoundingMode::Randomized && cfg.fallback_to_deterministic {
        fallback_used = true;
        method = Method::HeuristicFallback;
        solves += 1;
        match solve_sign_constrained(data, &det, solver) {
            Ok((t, r)) => {
                best = Some((0, t, r));
                signs = Some(det);
            }
            Err(e) => err = Some(e),
        }
    }
    let Some((_, trade, report)) = best else {
        return Err(err.unwrap_or_else(|| TamError::Infeasible("no candidate sign pattern was feasible".into())));
    };
    let report = SolveReport {
        method,
        seconds: start.elapsed().as_secs_f64(),
        solves,
        ..report
    }
    .with_bound(relaxation.upper_bound);
    Ok(HeuristicOutcome {
        trade,
        report,
        relaxation,
        signs: signs.unwrap_or_default(),
        candidate_utilities,
        fallback_used,
    })
}
