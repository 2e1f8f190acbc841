//! Monthly tax-loss-harvesting simulation.
//!
//! Trades happen on the first trading day more than 31 calendar days after
//! the previous trade, starting on the first trading day of the window. Each
//! trade is the heuristic's trade list rounded to whole shares and executed
//! at the close. Dividends and rounding residuals stay in cash for the next
//! trade, as do transaction costs, which are paid out of cash. Delisted
//! holdings are sold at their last close as soon as the price disappears.

pub mod market;

use std::time::Instant;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use market::{MarketData, RiskSnapshot, SyntheticSpec, business_days, realized_covariance, synthetic_market};

use crate::conic::ConicSolver;
use crate::heuristic::{RoundingConfig, heuristic_solve};
use crate::ledger::{
    AssetPosition, LedgerError, LotFill, LotTrade, SellAllocation, TaxLot, TaxParameters, Term, apply_trade,
    ltfo_allocate,
};
use crate::tam::{FactorRiskModel, LinearConstraintSet, RowTarget, TamError, TamProblemData, cash_target};

pub const REBALANCE_GAP_DAYS: i64 = 31;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BacktestError {
    #[error("the asset universe is empty")]
    EmptyUniverse,
    #[error("missing market data: {0}")]
    MissingData(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{date}: {source}")]
    Solve { date: NaiveDate, source: TamError },
    #[error("{date}: {source}")]
    Ledger { date: NaiveDate, source: LedgerError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestConfig {
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
    pub initial_cash: f64,
    /// Opening lots, keyed by asset id.
    pub initial_lots: Vec<(String, TaxLot)>,
    pub eta: f64,
    pub gamma_risk_tilde: f64,
    pub gamma_tc: f64,
    pub gamma_tax: f64,
    pub kappa: f64,
    pub tax: TaxParameters,
    pub rounding: RoundingConfig,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            start: None,
            end: None,
            initial_cash: 1_000_000.0,
            initial_lots: Vec::new(),
            eta: 0.005,
            gamma_risk_tilde: 200.0,
            gamma_tc: 1.0,
            gamma_tax: 1.0,
            kappa: 0.0005,
            tax: TaxParameters::default(),
            rounding: RoundingConfig::default(),
        }
    }
}

impl BacktestConfig {
    pub fn validate(&self) -> Result<(), BacktestError> {
        let bad = |m: &str| Err(BacktestError::InvalidConfig(m.into()));
        if let (Some(s), Some(e)) = (self.start, self.end) {
            if s > e {
                return bad("start date is after end date");
            }
        }
        if !(self.initial_cash >= 0.0) {
            return bad("initial cash must be nonnegative");
        }
        if !(0.0..1.0).contains(&self.eta) {
            return bad("eta must lie in [0, 1)");
        }
        for v in [self.gamma_risk_tilde, self.gamma_tc, self.gamma_tax, self.kappa] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad("trade-off weights and spreads must be nonnegative");
            }
        }
        if self.rounding.candidates == 0 {
            return bad("candidates must be at least 1");
        }
        self.tax.validate().map_err(|e| BacktestError::InvalidConfig(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Buy,
    Sell,
    /// Forced sale of a delisted holding.
    Delist,
}

impl Side {
    pub fn tag(&self) -> &'static str {
        match self {
            Self::Buy => "buy",
            Self::Sell => "sell",
            Self::Delist => "delist",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "buy" => Some(Self::Buy),
            "sell" => Some(Self::Sell),
            "delist" => Some(Self::Delist),
            _ => None,
        }
    }
}

/// One lot-level fill.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub date: NaiveDate,
    pub asset_id: String,
    pub lot_id: String,
    pub side: Side,
    /// Unsigned share count.
    pub shares: f64,
    pub price: f64,
    /// Unsigned dollar amount.
    pub dollars: f64,
    pub basis: f64,
    pub acquisition_date: NaiveDate,
    pub term: Option<Term>,
    pub realized_tax: f64,
}

impl TradeRecord {
    pub fn from_fill(date: NaiveDate, asset_id: &str, side: Side, f: LotFill) -> Self {
        Self {
            date,
            asset_id: asset_id.to_string(),
            lot_id: f.lot_id,
            side,
            shares: f.shares.abs(),
            price: f.price,
            dollars: f.shares.abs() * f.price,
            basis: f.basis,
            acquisition_date: f.acquisition_date,
            term: f.term,
            realized_tax: f.realized_tax,
        }
    }
}

/// What happened on one rebalance date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodRecord {
    pub date: NaiveDate,
    /// Pre-trade account value.
    pub account_value: f64,
    pub cash_init: f64,
    pub cash_des: f64,
    pub cash_after: f64,
    /// Optimizer's trade before rounding, dollars per asset.
    pub u_optimal: Vec<f64>,
    /// Executed trade, whole shares times price.
    pub u: Vec<f64>,
    pub shares: Vec<f64>,
    /// Post-trade `sqrt((h - h_b)' V (h - h_b)) / account value`.
    pub active_risk: f64,
    pub realized_tax: f64,
    pub cum_tax_liability: f64,
    pub utility: f64,
    pub bound: f64,
    pub gap: f64,
    pub solve_seconds: f64,
    pub method: String,
    /// Ledger dollar value after the trade.
    pub post_holdings: Vec<f64>,
    /// Value of the executed trade added to the pre-trade holding.
    pub expected_holdings: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestResult {
    pub periods: Vec<PeriodRecord>,
    pub trades: Vec<TradeRecord>,
    pub final_positions: Vec<AssetPosition>,
    pub final_cash: f64,
    pub cum_tax_liability: f64,
    pub seconds: f64,
}

/// Mutable simulation state between dates.
#[derive(Debug, Clone, PartialEq)]
pub struct BacktestState {
    pub positions: Vec<AssetPosition>,
    pub cash: f64,
    pub last_trade: Option<NaiveDate>,
    pub cum_tax: f64,
    pub period: usize,
}

impl BacktestState {
    pub fn new(cfg: &BacktestConfig, market: &MarketData) -> Result<Self, BacktestError> {
        let mut positions: Vec<AssetPosition> = market
            .assets
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let p = (0..market.dates.len()).find_map(|d| market.prices[d][i]).unwrap_or(1.0);
                AssetPosition::empty(id.clone(), p)
            })
            .collect();
        for (asset, lot) in &cfg.initial_lots {
            let i = market
                .assets
                .iter()
                .position(|a| a == asset)
                .ok_or_else(|| BacktestError::MissingData(format!("opening lot for unknown asset {asset}")))?;
            positions[i].lots.push(lot.clone());
        }
        Ok(Self {
            positions,
            cash: cfg.initial_cash,
            last_trade: None,
            cum_tax: 0.0,
            period: 0,
        })
    }
}

/// `sqrt(dev' V dev) / account_value`.
pub fn active_risk(model: &FactorRiskModel, dev: &[f64], account_value: f64) -> f64 {
    model.variance(dev).max(0.0).sqrt() / account_value
}

/// Whole shares to trade for a dollar trade: nearest integer, except that a
/// sale larger than the holding is cut toward zero.
pub fn round_shares(u: f64, price: f64, held_shares: f64) -> f64 {
    let q = (u / price).round();
    if q < 0.0 && -q > held_shares + 1e-9 {
        -(held_shares + 1e-9).floor()
    } else {
        q
    }
}

fn is_rebalance_day(state: &BacktestState, date: NaiveDate) -> bool {
    match state.last_trade {
        None => true,
        Some(last) => (date - last).num_days() > REBALANCE_GAP_DAYS,
    }
}

/// Credits dividends and liquidates delisted holdings on date index `d`.
fn daily_events(
    state: &mut BacktestState,
    market: &MarketData,
    d: usize,
    last_listed: &[Option<usize>],
    cfg: &BacktestConfig,
    trades: &mut Vec<TradeRecord>,
) -> Result<(), BacktestError> {
    let date = market.dates[d];
    for i in 0..market.n() {
        if let Some(p) = market.prices[d][i] {
            state.positions[i].price = p;
        }
        let shares = state.positions[i].shares();
        if shares <= 0.0 {
            continue;
        }
        state.cash += market.dividends[d][i] * shares;
        let delisted = market.prices[d][i].is_none() && last_listed[i].is_none_or(|l| l < d);
        if delisted {
            let pos = &state.positions[i];
            let last = market.last_close(d, i).unwrap_or(pos.price);
            let pos = AssetPosition { price: last, ..pos.clone() };
            let held = pos.holding();
            let ledger = |source| BacktestError::Ledger { date, source };
            let alloc = ltfo_allocate(&pos, held, date, &cfg.tax).map_err(ledger)?;
            let (next, fills, tax) = apply_trade(&pos, &LotTrade::Sell(&alloc), date, last, &cfg.tax).map_err(ledger)?;
            trades.extend(fills.into_iter().map(|f| TradeRecord::from_fill(date, &pos.asset_id, Side::Delist, f)));
            state.cash += held;
            state.cum_tax += tax;
            state.positions[i] = next;
        }
    }
    Ok(())
}

/// One rebalance on date index `d`: build the problem from the ledger, run
/// the heuristic, round to shares, and execute.
pub fn step_month(
    state: &BacktestState,
    market: &MarketData,
    d: usize,
    cfg: &BacktestConfig,
    solver: &dyn ConicSolver,
) -> Result<(BacktestState, PeriodRecord, Vec<TradeRecord>), BacktestError> {
    let date = market.dates[d];
    let listed: Vec<usize> = (0..market.n()).filter(|&i| market.prices[d][i].is_some()).collect();
    for i in 0..market.n() {
        if market.prices[d][i].is_none() && state.positions[i].shares() > 0.0 {
            return Err(BacktestError::MissingData(format!(
                "{date}: no price for held asset {}",
                market.assets[i]
            )));
        }
    }
    if listed.is_empty() {
        return Err(BacktestError::EmptyUniverse);
    }
    let snapshot = market
        .risk_at(date)
        .ok_or_else(|| BacktestError::MissingData(format!("{date}: no risk model")))?;

    let mut positions: Vec<AssetPosition> = listed.iter().map(|&i| state.positions[i].clone()).collect();
    for (p, &i) in positions.iter_mut().zip(&listed) {
        p.price = market.prices[d][i].expect("listed");
    }
    let h_init: Vec<f64> = positions.iter().map(AssetPosition::holding).collect();
    let account = h_init.iter().sum::<f64>() + state.cash;
    if !(account > 0.0) {
        return Err(BacktestError::InvalidConfig(format!("{date}: account value {account} is not positive")));
    }
    let raw_w: Vec<f64> = listed.iter().map(|&i| market.benchmark_weights[d][i]).collect();
    let w_total: f64 = raw_w.iter().sum();
    if !(w_total > 0.0) {
        return Err(BacktestError::MissingData(format!("{date}: no listed benchmark member")));
    }
    let benchmark: Vec<f64> = raw_w.iter().map(|w| w / w_total * account).collect();
    let mut trade_constraints = LinearConstraintSet::new(RowTarget::Trade);
    for (j, &i) in listed.iter().enumerate() {
        if !market.in_benchmark[d][i] {
            trade_constraints.forbid_buy(j);
        }
    }
    let risk_model = FactorRiskModel {
        exposures: snapshot.exposures.select_rows(listed.iter()),
        factor_cov: market.factor_cov.clone(),
        specific_var: listed.iter().map(|&i| snapshot.specific_var[i]).collect(),
    };
    let m = listed.len();
    let data = TamProblemData {
        alpha: vec![0.0; m],
        benchmark,
        initial_holdings: h_init.clone(),
        cash_init: state.cash,
        cash_des: cash_target(&h_init, state.cash, cfg.eta),
        spreads: vec![cfg.kappa; m],
        gamma_risk: cfg.gamma_risk_tilde / account,
        gamma_tc: cfg.gamma_tc,
        gamma_tax: cfg.gamma_tax,
        risk_model,
        trade_constraints,
        holding_constraints: LinearConstraintSet::new(RowTarget::Holding),
        positions,
        tax: cfg.tax,
        asof: date,
    };
    let rounding = RoundingConfig {
        rng_seed: cfg.rounding.rng_seed.wrapping_add(state.period as u64),
        ..cfg.rounding
    };
    let outcome = heuristic_solve(&data, &rounding, solver).map_err(|source| BacktestError::Solve { date, source })?;

    let mut next = state.clone();
    let mut trades = Vec::new();
    let n = market.n();
    let (mut u_opt, mut u_exec, mut shares) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut realized = 0.0;
    let mut tc = 0.0;
    let ledger = |source| BacktestError::Ledger { date, source };
    for (j, &i) in listed.iter().enumerate() {
        let pos = &data.positions[j];
        let q = round_shares(outcome.trade.u[j], pos.price, pos.shares());
        let dollars = q * pos.price;
        u_opt[i] = outcome.trade.u[j];
        shares[i] = q;
        u_exec[i] = dollars;
        if q == 0.0 {
            next.positions[i] = pos.clone();
            continue;
        }
        let (side, (updated, fills, tax)) = if q > 0.0 {
            let trade = LotTrade::Buy {
                dollars,
                lot_id: format!("{date}#{}", state.period),
            };
            (Side::Buy, apply_trade(pos, &trade, date, pos.price, &cfg.tax).map_err(ledger)?)
        } else {
            let alloc: SellAllocation = ltfo_allocate(pos, -dollars, date, &cfg.tax).map_err(ledger)?;
            (Side::Sell, apply_trade(pos, &LotTrade::Sell(&alloc), date, pos.price, &cfg.tax).map_err(ledger)?)
        };
        trades.extend(fills.into_iter().map(|f| TradeRecord::from_fill(date, &pos.asset_id, side, f)));
        realized += tax;
        tc += cfg.kappa * dollars.abs();
        next.positions[i] = updated;
    }
    next.cash = state.cash - u_exec.iter().sum::<f64>() - tc;
    next.cum_tax += realized;
    next.last_trade = Some(date);
    next.period += 1;

    let post: Vec<f64> = listed.iter().map(|&i| next.positions[i].holding()).collect();
    let dev: Vec<f64> = post.iter().zip(&data.benchmark).map(|(h, b)| h - b).collect();
    let expected: Vec<f64> = listed.iter().map(|&i| state_holding(state, market, d, i) + u_exec[i]).collect();
    let mut post_full = vec![0.0; n];
    let mut expected_full = vec![0.0; n];
    for (j, &i) in listed.iter().enumerate() {
        post_full[i] = post[j];
        expected_full[i] = expected[j];
    }
    let report = &outcome.report;
    let record = PeriodRecord {
        date,
        account_value: account,
        cash_init: state.cash,
        cash_des: data.cash_des,
        cash_after: next.cash,
        u_optimal: u_opt,
        u: u_exec,
        shares,
        active_risk: active_risk(&data.risk_model, &dev, account),
        realized_tax: realized,
        cum_tax_liability: next.cum_tax,
        utility: report.utility,
        bound: report.upper_bound.unwrap_or(f64::NAN),
        gap: report.gap.unwrap_or(f64::NAN),
        solve_seconds: report.seconds,
        method: report.method.tag().to_string(),
        post_holdings: post_full,
        expected_holdings: expected_full,
    };
    Ok((next, record, trades))
}

fn state_holding(state: &BacktestState, market: &MarketData, d: usize, i: usize) -> f64 {
    market.prices[d][i].map_or(0.0, |p| p * state.positions[i].shares())
}

pub fn run_backtest(
    cfg: &BacktestConfig,
    market: &MarketData,
    solver: &dyn ConicSolver,
) -> Result<BacktestResult, BacktestError> {
    let start = Instant::now();
    cfg.validate()?;
    market.validate()?;
    let first = match cfg.start {
        Some(s) => market.dates.iter().position(|d| *d >= s),
        None => Some(0),
    }
    .ok_or_else(|| BacktestError::MissingData("no trading dates on or after the start date".into()))?;
    let last = match cfg.end {
        Some(e) => market.dates.iter().rposition(|d| *d <= e),
        None => Some(market.dates.len() - 1),
    }
    .filter(|&l| l >= first)
    .ok_or_else(|| BacktestError::MissingData("no trading dates in the backtest window".into()))?;
    if let (Some(s), Some(&d0)) = (cfg.start, market.dates.first()) {
        if s < d0 {
            return Err(BacktestError::MissingData(format!("market data starts {d0}, after the start date {s}")));
        }
    }

    let last_listed = market.last_listed();
    let mut state = BacktestState::new(cfg, market)?;
    let mut periods = Vec::new();
    let mut trades = Vec::new();
    for d in first..=last {
        daily_events(&mut state, market, d, &last_listed, cfg, &mut trades)?;
        if is_rebalance_day(&state, market.dates[d]) {
            let (next, record, fills) = step_month(&state, market, d, cfg, solver)?;
            state = next;
            periods.push(record);
            trades.extend(fills);
        }
    }
    Ok(BacktestResult {
        periods,
        trades,
        final_positions: state.positions,
        final_cash: state.cash,
        cum_tax_liability: state.cum_tax,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// One row of the reported metric series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub date: NaiveDate,
    pub active_risk: f64,
    pub cum_tax_liability: f64,
    pub account_value: f64,
    pub utility: f64,
    pub bound: f64,
    pub gap: f64,
    pub solve_seconds: f64,
}

pub fn report_metrics(result: &BacktestResult) -> Vec<MetricRow> {
    result
        .periods
        .iter()
        .map(|p| MetricRow {
            date: p.date,
            active_risk: p.active_risk,
            cum_tax_liability: p.cum_tax_liability,
            account_value: p.account_value,
            utility: p.utility,
            bound: p.bound,
            gap: p.gap,
            solve_seconds: p.solve_seconds,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::ClarabelBackend;

    #[test]
    fn share_rounding() {
        assert_eq!(round_shares(1234.56, 10.0, 0.0), 123.0);
        assert_eq!(round_shares(-1234.56, 10.0, 500.0), -123.0);
        assert_eq!(round_shares(-1000.0, 10.0, 99.6), -99.0);
        assert_eq!(round_shares(-3.0, 10.0, 5.0), 0.0);
    }

    #[test]
    fn active_risk_example() {
        let model = FactorRiskModel::diagonal(vec![4e-4, 4e-4]);
        assert!((active_risk(&model, &[1000.0, 0.0], 1e6) - 2e-5).abs() < 1e-15);
        assert_eq!(active_risk(&model, &[0.0, 0.0], 1e6), 0.0);
    }

    #[test]
    fn cadence_and_first_trade() {
        let spec = SyntheticSpec::new(5, 6, 2, 3);
        let market = synthetic_market(&spec).unwrap();
        let res = run_backtest(&BacktestConfig::default(), &market, &ClarabelBackend::default()).unwrap();
        let first = &res.periods[0];
        assert_eq!(first.date, market.dates[0]);
        assert!((first.u_optimal.iter().sum::<f64>() - 995_000.0).abs() < 1e-3);
        for w in res.periods.windows(2) {
            let gap = (w[1].date - w[0].date).num_days();
            assert!(gap > REBALANCE_GAP_DAYS && gap <= REBALANCE_GAP_DAYS + 4, "{gap}");
        }
    }

    #[test]
    fn empty_universe_rejected() {
        let mut market = synthetic_market(&SyntheticSpec::new(1, 2, 1, 1)).unwrap();
        market.assets.clear();
        assert!(matches!(
            run_backtest(&BacktestConfig::default(), &market, &ClarabelBackend::default()),
            Err(BacktestError::EmptyUniverse)
        ));
    }
}
