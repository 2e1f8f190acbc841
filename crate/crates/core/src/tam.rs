//! The tax-aware Markowitz problem: data, utility, and the convex solve for a
//! fixed buy/sell sign pattern.

use std::time::Instant;

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conic::{Affine, ConicProgram, ConicSolver, SolveStatus, SolverError, Var};
use crate::ledger::{AssetPosition, LedgerError, SellAllocation, TaxParameters, ltfo_allocate, tax_liability};
use crate::piecewise::{PieceError, SellSegment};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TamError {
    #[error("invalid problem data: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Backend(#[from] SolverError),
    #[error(transparent)]
    Piece(#[from] PieceError),
}

/// `V = X Sigma X' + D`, in return units.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorRiskModel {
    /// `n x k`.
    pub exposures: DMatrix<f64>,
    /// `k x k`.
    pub factor_cov: DMatrix<f64>,
    pub specific_var: Vec<f64>,
}

impl FactorRiskModel {
    pub fn new(exposures: DMatrix<f64>, factor_cov: DMatrix<f64>, specific_var: Vec<f64>) -> Result<Self, TamError> {
        let m = Self {
            exposures,
            factor_cov,
            specific_var,
        };
        let errs = m.problems();
        if errs.is_empty() { Ok(m) } else { Err(TamError::Validation(errs)) }
    }

    /// Diagonal model with no factors.
    pub fn diagonal(specific_var: Vec<f64>) -> Self {
        Self {
            exposures: DMatrix::zeros(specific_var.len(), 0),
            factor_cov: DMatrix::zeros(0, 0),
            specific_var,
        }
    }

    pub fn n(&self) -> usize {
        self.specific_var.len()
    }

    pub fn k(&self) -> usize {
        self.factor_cov.nrows()
    }

    fn problems(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let (n, k) = (self.n(), self.k());
        if self.factor_cov.ncols() != k {
            errs.push(format!("factor covariance is {}x{}, not square", k, self.factor_cov.ncols()));
            return errs;
        }
        if self.exposures.nrows() != n || self.exposures.ncols() != k {
            errs.push(format!(
                "exposures are {}x{}, expected {n}x{k}",
                self.exposures.nrows(),
                self.exposures.ncols()
            ));
        }
        if self.exposures.iter().any(|v| !v.is_finite()) {
            errs.push("exposures contain non-finite values".into());
        }
        let asym = (&self.factor_cov - self.factor_cov.transpose()).abs().max();
        if k > 0 && asym > 1e-12 * self.factor_cov.abs().max().max(1.0) {
            errs.push(format!("factor covariance not symmetric (max asymmetry {asym:e})"));
        } else if k > 0 && self.factor_cov.clone().cholesky().is_none() {
            errs.push("factor covariance is not positive definite".into());
        }
        for (i, d) in self.specific_var.iter().enumerate() {
            if !(*d > 0.0) || !d.is_finite() {
                errs.push(format!("specific variance of asset {i} must be positive, got {d}"));
            }
        }
        errs
    }

    /// `X' dev`.
    pub fn factor_exposure(&self, dev: &[f64]) -> DVector<f64> {
        self.exposures.tr_mul(&DVector::from_column_slice(dev))
    }

    /// `dev' X Sigma X' dev`.
    pub fn systematic_risk(&self, dev: &[f64]) -> f64 {
        let y = self.factor_exposure(dev);
        (y.transpose() * &self.factor_cov * &y)[(0, 0)]
    }

    /// `dev' D dev`.
    pub fn specific_risk(&self, dev: &[f64]) -> f64 {
        dev.iter().zip(&self.specific_var).map(|(x, d)| d * x * x).sum()
    }

    pub fn variance(&self, dev: &[f64]) -> f64 {
        self.systematic_risk(dev) + self.specific_risk(dev)
    }

    /// The dense `n x n` covariance.
    pub fn dense(&self) -> DMatrix<f64> {
        let mut v = &self.exposures * &self.factor_cov * self.exposures.transpose();
        for (i, d) in self.specific_var.iter().enumerate() {
            v[(i, i)] += d;
        }
        v
    }
}

/// Which vector a constraint row reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowTarget {
    Trade,
    Holding,
}

/// `lower <= sum_i coef_i v_i <= upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub label: String,
    pub coefs: Vec<(usize, f64)>,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraintSet {
    pub target: RowTarget,
    pub rows: Vec<LinearConstraint>,
}

impl LinearConstraintSet {
    pub fn new(target: RowTarget) -> Self {
        Self { target, rows: Vec::new() }
    }

    pub fn push(&mut self, label: impl Into<String>, coefs: Vec<(usize, f64)>, lower: f64, upper: f64) {
        self.rows.push(LinearConstraint {
            label: label.into(),
            coefs,
            lower,
            upper,
        });
    }

    /// `u_i <= 0` (or `h_i <= 0` for a holding set).
    pub fn forbid_buy(&mut self, i: usize) {
        self.push(format!("no-buy[{i}]"), vec![(i, 1.0)], f64::NEG_INFINITY, 0.0);
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TamProblemData {
    pub alpha: Vec<f64>,
    pub benchmark: Vec<f64>,
    pub initial_holdings: Vec<f64>,
    pub cash_init: f64,
    pub cash_des: f64,
    pub spreads: Vec<f64>,
    pub gamma_risk: f64,
    pub gamma_tc: f64,
    pub gamma_tax: f64,
    pub risk_model: FactorRiskModel,
    pub trade_constraints: LinearConstraintSet,
    pub holding_constraints: LinearConstraintSet,
    pub positions: Vec<AssetPosition>,
    pub tax: TaxParameters,
    pub asof: NaiveDate,
}

impl TamProblemData {
    pub fn n(&self) -> usize {
        self.alpha.len()
    }

    /// `1' h_init + c_init`.
    pub fn account_value(&self) -> f64 {
        self.initial_holdings.iter().sum::<f64>() + self.cash_init
    }

    /// Required `1' u`.
    pub fn net_trade(&self) -> f64 {
        self.cash_init - self.cash_des
    }

    /// Indices of assets with at least one lot at a loss.
    pub fn loss_assets(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.positions[i].has_loss_lot()).collect()
    }

    /// Largest purchase of each asset allowed by single-asset rows, never
    /// above the account value. Assets neither held nor in the benchmark
    /// get a cap of zero.
    pub fn buy_caps(&self) -> Vec<f64> {
        let s = self.account_value();
        let mut caps: Vec<f64> = (0..self.n())
            .map(|i| if self.initial_holdings[i] <= 0.0 && self.benchmark[i] <= 0.0 { 0.0 } else { s })
            .collect();
        for set in [&self.trade_constraints, &self.holding_constraints] {
            for row in &set.rows {
                if let [(i, a)] = row.coefs[..] {
                    let limit = if a > 0.0 {
                        row.upper / a
                    } else if a < 0.0 {
                        row.lower / a
                    } else {
                        continue;
                    };
                    let limit = match set.target {
                        RowTarget::Trade => limit,
                        RowTarget::Holding => limit - self.initial_holdings[i],
                    };
                    caps[i] = caps[i].min(limit.max(0.0));
                }
            }
        }
        caps
    }
}

/// `eta (1' h_init + c_init)`.
pub fn cash_target(h_init: &[f64], c_init: f64, eta: f64) -> f64 {
    eta * (h_init.iter().sum::<f64>() + c_init)
}

/// Checks every invariant of the problem data; all problems are reported at once.
pub fn validate(data: &TamProblemData) -> Result<(), TamError> {
    let mut errs = Vec::new();
    let n = data.n();
    for (name, len) in [
        ("benchmark", data.benchmark.len()),
        ("initial_holdings", data.initial_holdings.len()),
        ("spreads", data.spreads.len()),
        ("positions", data.positions.len()),
        ("risk model", data.risk_model.n()),
    ] {
        if len != n {
            errs.push(format!("{name} has length {len}, expected {n}"));
        }
    }
    if !errs.is_empty() {
        return Err(TamError::Validation(errs));
    }
    errs.extend(data.risk_model.problems());
    for (name, v) in [("gamma_risk", data.gamma_risk), ("gamma_tc", data.gamma_tc), ("gamma_tax", data.gamma_tax)] {
        if !(v >= 0.0) || !v.is_finite() {
            errs.push(format!("{name} must be nonnegative and finite, got {v}"));
        }
    }
    if !data.cash_init.is_finite() || !data.cash_des.is_finite() {
        errs.push("cash amounts must be finite".into());
    }
    if !(data.account_value() > 0.0) {
        errs.push(format!("account value must be positive, got {}", data.account_value()));
    }
    if let Err(e) = data.tax.validate() {
        errs.push(e.to_string());
    }
    for i in 0..n {
        if !data.alpha[i].is_finite() || !data.benchmark[i].is_finite() {
            errs.push(format!("asset {i}: alpha and benchmark must be finite"));
        }
        if !(data.spreads[i] >= 0.0) {
            errs.push(format!("asset {i}: spread must be nonnegative"));
        }
        let h = data.initial_holdings[i];
        if !(h >= 0.0) {
            errs.push(format!("asset {i}: initial holding must be nonnegative, got {h}"));
        }
        let pos = &data.positions[i];
        if let Err(e) = pos.validate() {
            errs.push(format!("asset {i}: {e}"));
            continue;
        }
        let held = pos.holding();
        if (held - h).abs() > 1e-6 * held.abs().max(1.0) {
            errs.push(format!(
                "asset {i} ({}): ledger mismatch, lots are worth {held} but initial holding is {h}",
                pos.asset_id
            ));
        }
        if let Err(e) = pos.rated_lots(data.asof, &data.tax) {
            errs.push(format!("asset {i}: {e}"));
        }
    }
    for set in [&data.trade_constraints, &data.holding_constraints] {
        for row in &set.rows {
            if !(row.lower <= row.upper) {
                errs.push(format!("constraint {}: lower {} exceeds upper {}", row.label, row.lower, row.upper));
            }
            if let Some((i, _)) = row.coefs.iter().find(|(i, _)| *i >= n) {
                errs.push(format!("constraint {}: asset index {i} out of range", row.label));
            }
        }
    }
    if errs.is_empty() { Ok(()) } else { Err(TamError::Validation(errs)) }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeList {
    pub u: Vec<f64>,
    /// Empty for assets that are not sold.
    pub allocations: Vec<SellAllocation>,
    pub post_holdings: Vec<f64>,
}

impl TradeList {
    /// Completes `u` with LTFO allocations and post-trade holdings.
    pub fn from_trades(data: &TamProblemData, u: Vec<f64>) -> Result<Self, TamError> {
        let mut allocations = Vec::with_capacity(u.len());
        for (i, &ui) in u.iter().enumerate() {
            allocations.push(if ui < 0.0 {
                ltfo_allocate(&data.positions[i], -ui, data.asof, &data.tax)?
            } else {
                SellAllocation::default()
            });
        }
        let post_holdings = data.initial_holdings.iter().zip(&u).map(|(h, x)| h + x).collect();
        Ok(Self {
            u,
            allocations,
            post_holdings,
        })
    }

    pub fn zero(data: &TamProblemData) -> Self {
        Self {
            u: vec![0.0; data.n()],
            allocations: vec![SellAllocation::default(); data.n()],
            post_holdings: data.initial_holdings.clone(),
        }
    }

    /// `1 / -1` per asset, with zero trades counted as buys.
    pub fn signs(&self) -> Vec<i8> {
        self.u.iter().map(|&x| if x < 0.0 { -1 } else { 1 }).collect()
    }
}

/// The four utility components, all in dollars.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityTerms {
    pub expected_return: f64,
    /// `(h - h_b)' V (h - h_b)`, unweighted.
    pub risk: f64,
    /// `kappa' |u|`, unweighted.
    pub transaction_cost: f64,
    /// Exact LTFO liability, unweighted.
    pub tax: f64,
    pub utility: f64,
}

/// Violated constraints at `u`, with tolerance `tol` dollars.
pub fn infeasibilities(data: &TamProblemData, u: &[f64], tol: f64) -> Vec<String> {
    let mut errs = Vec::new();
    if u.len() != data.n() {
        errs.push(format!("trade has length {}, expected {}", u.len(), data.n()));
        return errs;
    }
    let s = data.account_value();
    let net: f64 = u.iter().sum();
    if (net - data.net_trade()).abs() > 1e-6 * s.abs().max(1.0) {
        errs.push(format!("cash: 1'u = {net}, required {}", data.net_trade()));
    }
    for i in 0..data.n() {
        let h = data.initial_holdings[i] + u[i];
        if h < -tol {
            errs.push(format!("long-only: asset {i} ends at {h}"));
        }
    }
    for set in [&data.trade_constraints, &data.holding_constraints] {
        for row in &set.rows {
            let v: f64 = row
                .coefs
                .iter()
                .map(|&(i, a)| {
                    a * match set.target {
                        RowTarget::Trade => u[i],
                        RowTarget::Holding => data.initial_holdings[i] + u[i],
                    }
                })
                .sum();
            if v < row.lower - tol || v > row.upper + tol {
                errs.push(format!("constraint {}: value {v} outside [{}, {}]", row.label, row.lower, row.upper));
            }
        }
    }
    errs
}

pub fn utility_terms(data: &TamProblemData, u: &[f64]) -> Result<UtilityTerms, TamError> {
    let tol = 1e-6 * data.account_value().abs().max(1.0);
    let errs = infeasibilities(data, u, tol);
    if !errs.is_empty() {
        return Err(TamError::Infeasible(errs.join("; ")));
    }
    let dev: Vec<f64> = (0..data.n())
        .map(|i| data.initial_holdings[i] + u[i] - data.benchmark[i])
        .collect();
    let expected_return = data.alpha.iter().zip(u).map(|(a, x)| a * x).sum();
    let risk = data.risk_model.variance(&dev);
    let transaction_cost = data.spreads.iter().zip(u).map(|(k, x)| k * x.abs()).sum();
    let mut tax = 0.0;
    for (i, &x) in u.iter().enumerate() {
        // Sales within the tolerance of the full holding are treated as liquidations.
        let x = x.max(-data.positions[i].holding());
        tax += tax_liability(&data.positions[i], x, data.asof, &data.tax)?;
    }
    let utility = expected_return - data.gamma_risk * risk - data.gamma_tc * transaction_cost - data.gamma_tax * tax;
    Ok(UtilityTerms {
        expected_return,
        risk,
        transaction_cost,
        tax,
        utility,
    })
}

/// `alpha'u - gamma_risk (h-h_b)'V(h-h_b) - gamma_tc kappa'|u| - gamma_tax L(u)`.
pub fn utility(data: &TamProblemData, u: &[f64]) -> Result<f64, TamError> {
    Ok(utility_terms(data, u)?.utility)
}

/// How an asset's trade direction is restricted in a convex solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SignChoice {
    /// `u_i >= 0`.
    Buy,
    /// `u_i <= 0`.
    Sell,
    /// Either direction; only valid when the asset's cost is convex.
    Free,
}

impl SignChoice {
    pub fn from_sign(z: i8) -> Self {
        if z < 0 { Self::Sell } else { Self::Buy }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    SignConstrained,
    Relaxation,
    HeuristicDeterministic,
    HeuristicRandomized,
    HeuristicFallback,
    Oracle,
}

impl Method {
    pub fn tag(&self) -> &'static str {
        match self {
            Self::SignConstrained => "sign-constrained",
            Self::Relaxation => "relaxation",
            Self::HeuristicDeterministic => "heuristic-deterministic",
            Self::HeuristicRandomized => "heuristic-randomized",
            Self::HeuristicFallback => "heuristic-fallback",
            Self::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// Exact utility of the returned trade list.
    pub utility: f64,
    /// The solver's optimal value, converted to utility dollars.
    pub solver_utility: f64,
    pub upper_bound: Option<f64>,
    pub gap: Option<f64>,
    pub method: Method,
    pub account_value: f64,
    pub seconds: f64,
    pub solves: usize,
}

impl SolveReport {
    pub fn with_bound(mut self, bound: f64) -> Self {
        self.upper_bound = Some(bound);
        self.gap = Some(bound - self.utility);
        self
    }

    /// Gap in basis points of account value.
    pub fn gap_bp(&self) -> Option<f64> {
        self.gap.map(|g| 1e4 * g / self.account_value)
    }
}

/// Per-asset cost data in scaled units (dollars divided by account value).
///
/// For `x >= 0` the cost is `a x^2 + b_buy x + c`; for `x < 0` it is
/// `a x^2 + b_sell x + c + min sum_j cost_j s_j` over lot sales `s_j`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct AssetTerms {
    pub a: f64,
    pub b_buy: f64,
    pub b_sell: f64,
    pub c: f64,
    pub segments: Vec<SellSegment>,
    pub cap: f64,
}

impl AssetTerms {
    pub fn has_loss_segment(&self) -> bool {
        self.segments.iter().any(|s| s.cost < 0.0)
    }

    pub fn sell_limit(&self) -> f64 {
        self.segments.iter().map(|s| s.width).sum()
    }
}

/// Scaled problem: `x = u / S`, objective `-U / S`.
pub(crate) struct ScaledProgram {
    pub program: ConicProgram,
    pub x: Vec<Var>,
    pub scale: f64,
    pub terms: Vec<AssetTerms>,
}

pub(crate) fn asset_terms(data: &TamProblemData) -> Result<Vec<AssetTerms>, TamError> {
    let s = data.account_value();
    let g = data.gamma_risk * s;
    let caps = data.buy_caps();
    (0..data.n())
        .map(|i| {
            let a = g * data.risk_model.specific_var[i];
            let d = (data.initial_holdings[i] - data.benchmark[i]) / s;
            let lin = -data.alpha[i] + 2.0 * a * d;
            let tc = data.gamma_tc * data.spreads[i];
            let segments = data.positions[i]
                .rated_lots(data.asof, &data.tax)?
                .into_iter()
                .filter(|l| l.value > 0.0)
                .map(|l| SellSegment {
                    width: l.value / s,
                    cost: data.gamma_tax * l.rate,
                })
                .collect();
            Ok(AssetTerms {
                a,
                b_buy: lin + tc,
                b_sell: lin - tc,
                c: a * d * d,
                segments,
                cap: caps[i] / s,
            })
        })
        .collect()
}

/// Variables and constraints shared by every formulation: trades, factor
/// exposures with their risk term, cash balance, long-only, and the rows of
/// both constraint sets. Per-asset costs are left to the caller.
pub(crate) fn base_program(data: &TamProblemData) -> Result<ScaledProgram, TamError> {
    let s = data.account_value();
    let g = data.gamma_risk * s;
    let n = data.n();
    let mut p = ConicProgram::new();
    let x: Vec<Var> = (0..n).map(|i| p.add_var(format!("x[{i}]"))).collect();
    let rm = &data.risk_model;
    let k = rm.k();
    if k > 0 && g > 0.0 {
        let d: Vec<f64> = (0..n).map(|i| (data.initial_holdings[i] - data.benchmark[i]) / s).collect();
        let yd = rm.factor_exposure(&d);
        let y: Vec<Var> = (0..k).map(|f| p.add_var(format!("y[{f}]"))).collect();
        for f in 0..k {
            let mut e = Affine::var(y[f]);
            for i in 0..n {
                let xi = rm.exposures[(i, f)];
                if xi != 0.0 {
                    e = e.plus(x[i], -xi);
                }
            }
            p.add_eq(e, yd[f]);
            for f2 in 0..k {
                p.add_quadratic(y[f], y[f2], g * rm.factor_cov[(f, f2)]);
            }
        }
    }
    let mut cash = Affine::default();
    for &xi in &x {
        cash = cash.plus(xi, 1.0);
    }
    p.add_eq(cash, data.net_trade() / s);
    for i in 0..n {
        p.add_ge(Affine::var(x[i]), -data.initial_holdings[i] / s);
    }
    for set in [&data.trade_constraints, &data.holding_constraints] {
        for row in &set.rows {
            let mut e = Affine::default();
            let mut shift = 0.0;
            for &(i, a) in &row.coefs {
                e = e.plus(x[i], a);
                if set.target == RowTarget::Holding {
                    shift += a * data.initial_holdings[i];
                }
            }
            p.add_range(e, (row.lower - shift) / s, (row.upper - shift) / s);
        }
    }
    Ok(ScaledProgram {
        program: p,
        x,
        scale: s,
        terms: asset_terms(data)?,
    })
}

/// Adds the convex cost of one asset under a sign restriction.
pub(crate) fn add_convex_asset(p: &mut ConicProgram, x: Var, t: &AssetTerms, choice: SignChoice, label: usize) {
    p.add_quadratic(x, x, t.a);
    p.add_objective_constant(t.c);
    let sell_vars = |p: &mut ConicProgram| -> Affine {
        let mut total = Affine::default();
        for (j, seg) in t.segments.iter().enumerate() {
            let v = p.add_var(format!("s[{label},{j}]"));
            p.add_range(Affine::var(v), 0.0, seg.width);
            total = total.plus(v, 1.0);
        }
        total
    };
    match choice {
        SignChoice::Buy => {
            p.add_ge(Affine::var(x), 0.0);
            p.add_linear(x, t.b_buy);
        }
        SignChoice::Sell => {
            p.add_le(Affine::var(x), 0.0);
            p.add_linear(x, t.b_sell);
            let sold = sell_vars(p);
            for (k, seg) in t.segments.iter().enumerate() {
                let (v, _) = sold.terms[k];
                p.add_linear(v, seg.cost);
            }
            p.add_eq(sold.plus(x, 1.0), 0.0);
        }
        SignChoice::Free => {
            let buy = p.add_var(format!("p[{label}]"));
            p.add_range(Affine::var(buy), 0.0, t.cap);
            p.add_linear(buy, t.b_buy);
            let sold = sell_vars(p);
            for (k, seg) in t.segments.iter().enumerate() {
                let (v, _) = sold.terms[k];
                p.add_linear(v, seg.cost - t.b_sell);
            }
            // Without lots the asset cannot be sold.
            p.add_eq(sold.plus(x, 1.0).plus(buy, -1.0), 0.0);
        }
    }
}

pub(crate) fn status_error(status: SolveStatus, detail: &str) -> TamError {
    match status {
        SolveStatus::Infeasible => TamError::Infeasible(format!("no trade satisfies the constraints ({detail})")),
        SolveStatus::Unbounded => TamError::Solver(format!("problem reported unbounded ({detail})")),
        _ => TamError::Solver(format!("numerical failure ({detail})")),
    }
}

/// Snaps a scaled solver trade onto the feasible set it came from.
pub(crate) fn clean_trades(data: &TamProblemData, x: &[f64], scale: f64, choices: Option<&[SignChoice]>) -> Vec<f64> {
    (0..data.n())
        .map(|i| {
            let mut u = x[i] * scale;
            let tiny = 1e-9 * scale;
            if let Some(c) = choices {
                match c[i] {
                    SignChoice::Buy => u = u.max(0.0),
                    SignChoice::Sell => u = u.min(0.0),
                    SignChoice::Free => {}
                }
            }
            if u.abs() < tiny {
                u = 0.0;
            }
            u.max(-data.initial_holdings[i])
        })
        .collect()
}

/// Globally optimal trades subject to per-asset sign restrictions.
pub fn solve_with_signs(
    data: &TamProblemData,
    choices: &[SignChoice],
    solver: &dyn ConicSolver,
) -> Result<(TradeList, SolveReport), TamError> {
    let start = Instant::now();
    if choices.len() != data.n() {
        return Err(TamError::Validation(vec![format!(
            "sign pattern has length {}, expected {}",
            choices.len(),
            data.n()
        )]));
    }
    let mut sp = base_program(data)?;
    for i in 0..data.n() {
        let t = &sp.terms[i];
        if choices[i] == SignChoice::Free && t.has_loss_segment() && t.cap > 0.0 {
            return Err(TamError::Validation(vec![format!(
                "asset {i} holds a loss lot and needs a buy or sell sign"
            )]));
        }
        add_convex_asset(&mut sp.program, sp.x[i], t, choices[i], i);
    }
    let sol = solver.solve(&sp.program)?;
    if sol.status != SolveStatus::Optimal {
        return Err(status_error(sol.status, &sol.detail));
    }
    let u = clean_trades(data, &sol.x, sp.scale, Some(choices));
    let trade = TradeList::from_trades(data, u)?;
    let utility = utility(data, &trade.u)?;
    Ok((
        trade,
        SolveReport {
            utility,
            solver_utility: -sol.objective * sp.scale,
            upper_bound: None,
            gap: None,
            method: Method::SignConstrained,
            account_value: sp.scale,
            seconds: start.elapsed().as_secs_f64(),
            solves: 1,
        },
    ))
}

/// Stage two of the heuristic: `z_i u_i >= 0` for every asset.
pub fn solve_sign_constrained(
    data: &TamProblemData,
    signs: &[i8],
    solver: &dyn ConicSolver,
) -> Result<(TradeList, SolveReport), TamError> {
    let choices: Vec<SignChoice> = signs.iter().map(|&z| SignChoice::from_sign(z)).collect();
    solve_with_signs(data, &choices, solver)
}
