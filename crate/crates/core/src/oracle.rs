//! Exact and brute-force references.

use std::time::Instant;

use chrono::NaiveDate;
use rayon::prelude::*;
use thiserror::Error;

use crate::conic::ConicSolver;
use crate::ledger::{AssetPosition, LedgerError, TaxParameters, classify_term, lot_tax_rate};
use crate::piecewise::PiecewiseQuadratic;
use crate::tam::{SignChoice, TamError, TamProblemData, TradeList, solve_with_signs};

pub const DEFAULT_MAX_LOSS_ASSETS: usize = 12;
pub const MAX_BRUTEFORCE_LOTS: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("{m} assets hold loss lots; enumeration is limited to {max}")]
    Refused { m: usize, max: usize },
    #[error("{lots} lots exceed the brute-force limit of {max}")]
    TooManyLots { lots: usize, max: usize },
    #[error(transparent)]
    Tam(#[from] TamError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    /// `U*`.
    pub best_utility: f64,
    pub best_signs: Vec<SignChoice>,
    pub best_trade: TradeList,
    /// Indices of the enumerated assets; bit `b` of a mask refers to `loss_assets[b]`.
    pub loss_assets: Vec<usize>,
    /// `(mask, utility)` in evaluation order; `None` for infeasible patterns.
    /// A set bit means the asset may only be sold.
    pub pattern_utilities: Vec<(u64, Option<f64>)>,
    pub patterns: usize,
    pub seconds: f64,
}

fn pattern(data: &TamProblemData, loss: &[usize], mask: u64) -> Vec<SignChoice> {
    let mut choices = vec![SignChoice::Free; data.n()];
    for (b, &i) in loss.iter().enumerate() {
        choices[i] = if mask >> b & 1 == 1 { SignChoice::Sell } else { SignChoice::Buy };
    }
    choices
}

/// Global optimum by solving every buy/sell pattern over the loss-lot assets.
/// Patterns are visited in Gray-code order.
pub fn enumerate_signs_solve(
    data: &TamProblemData,
    max_loss_assets: usize,
    solver: &dyn ConicSolver,
) -> Result<OracleResult, OracleError> {
    let start = Instant::now();
    crate::tam::validate(data)?;
    let loss = data.loss_assets();
    let m = loss.len();
    if m > max_loss_assets || m >= 63 {
        return Err(OracleError::Refused { m, max: max_loss_assets });
    }
    let masks: Vec<u64> = (0..1u64 << m).map(|k| k ^ (k >> 1)).collect();
    let results: Vec<Result<(TradeList, f64), TamError>> = masks
        .par_iter()
        .map(|&mask| solve_with_signs(data, &pattern(data, &loss, mask), solver).map(|(t, r)| (t, r.utility)))
        .collect();

    let mut best: Option<(u64, TradeList, f64)> = None;
    let mut pattern_utilities = Vec::with_capacity(masks.len());
    let mut failure = None;
    for (&mask, r) in masks.iter().zip(results) {
        match r {
            Ok((trade, u)) => {
                pattern_utilities.push((mask, Some(u)));
                if best.as_ref().is_none_or(|b| u > b.2) {
                    best = Some((mask, trade, u));
                }
            }
            Err(TamError::Infeasible(_)) => pattern_utilities.push((mask, None)),
            Err(e) => {
                pattern_utilities.push((mask, None));
                failure = Some(e);
            }
        }
    }
    if let Some(e) = failure {
        return Err(e.into());
    }
    let Some((mask, best_trade, best_utility)) = best else {
        return Err(TamError::Infeasible("every sign pattern is infeasible".into()).into());
    };
    Ok(OracleResult {
        best_utility,
        best_signs: pattern(data, &loss, mask),
        best_trade,
        loss_assets: loss,
        patterns: masks.len(),
        pattern_utilities,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Minimum of `sum_j T_j s_j` over `0 <= s_j <= value_j`, `sum_j s_j = sell`,
/// taken over all vertices of that polytope.
pub fn ltfo_bruteforce(
    pos: &AssetPosition,
    sell_dollars: f64,
    asof: NaiveDate,
    params: &TaxParameters,
) -> Result<f64, OracleError> {
    let lots: Vec<(f64, f64)> = pos
        .lots
        .iter()
        .filter(|l| l.quantity > 0.0)
        .map(|l| {
            let term = classify_term(l, asof, params)?;
            Ok((l.quantity * pos.price, lot_tax_rate(l, pos.price, term, params)?))
        })
        .collect::<Result<_, LedgerError>>()?;
    if lots.len() > MAX_BRUTEFORCE_LOTS {
        return Err(OracleError::TooManyLots {
            lots: lots.len(),
            max: MAX_BRUTEFORCE_LOTS,
        });
    }
    let held: f64 = lots.iter().map(|l| l.0).sum();
    let tol = 1e-9 * held.max(1.0);
    let exact = 1e-12 * held.max(1.0);
    if sell_dollars > held + tol {
        return Err(LedgerError::Oversell {
            asset_id: pos.asset_id.clone(),
            requested: sell_dollars,
            held,
        }
        .into());
    }
    if sell_dollars <= 0.0 {
        return Ok(0.0);
    }
    // A vertex sells some lots in full and at most one lot partially.
    let mut best = f64::INFINITY;
    for full in 0u32..1 << lots.len() {
        let (mut sold, mut cost) = (0.0, 0.0);
        for (j, &(v, t)) in lots.iter().enumerate() {
            if full >> j & 1 == 1 {
                sold += v;
                cost += v * t;
            }
        }
        let rest = sell_dollars - sold;
        let all_sold = full.count_ones() as usize == lots.len();
        if rest.abs() <= exact || (all_sold && rest.abs() <= tol) {
            best = best.min(cost);
        } else if rest > 0.0 {
            for (j, &(v, t)) in lots.iter().enumerate() {
                if full >> j & 1 == 0 && rest <= v {
                    best = best.min(cost + rest * t);
                }
            }
        }
    }
    Ok(best)
}

/// Lower convex hull of `f` sampled on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledHull {
    pub xs: Vec<f64>,
    pub values: Vec<f64>,
    pub hull: Vec<f64>,
}

pub fn envelope_bruteforce(f: &PiecewiseQuadratic, grid_size: usize) -> Result<SampledHull, OracleError> {
    let (lo, hi) = (f.lo(), f.hi());
    let n = grid_size.max(2);
    let xs: Vec<f64> = (0..n)
        .map(|k| if k + 1 == n { hi } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 })
        .collect();
    let values = xs
        .iter()
        .map(|&x| f.eval(x))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| OracleError::Tam(e.into()))?;
    // Monotone chain, lower half.
    let mut chain: Vec<usize> = Vec::new();
    for k in 0..n {
        while chain.len() >= 2 {
            let (a, b) = (chain[chain.len() - 2], chain[chain.len() - 1]);
            let cross = (xs[b] - xs[a]) * (values[k] - values[a]) - (values[b] - values[a]) * (xs[k] - xs[a]);
            if cross <= 0.0 {
                chain.pop();
            } else {
                break;
            }
        }
        chain.push(k);
    }
    let mut hull = vec![0.0; n];
    for w in chain.windows(2) {
        let (a, b) = (w[0], w[1]);
        for k in a..=b {
            let t = if b == a { 0.0 } else { (xs[k] - xs[a]) / (xs[b] - xs[a]) };
            hull[k] = values[a] + t * (values[b] - values[a]);
        }
    }
    if chain.len() == 1 {
        hull[0] = values[0];
    }
    Ok(SampledHull { xs, values, hull })
}
