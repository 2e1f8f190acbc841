#![allow(dead_code)]

use chrono::{Days, NaiveDate};
use proptest::prelude::*;
use rand::RngExt;

use taxopt::ledger::{AssetPosition, TaxLot};
use taxopt::piecewise::{PiecewiseQuadratic, QuadPiece, SellSegment, SeparableCost};
use taxopt::tam::{LinearConstraint, TamProblemData};

pub fn asof() -> NaiveDate {
    NaiveDate::from_ymd_opt(2019, 1, 2).unwrap()
}

/// Up to six lots with ages on both sides of the one-year boundary and bases
/// well above and below the price.
pub fn random_position<R: RngExt + ?Sized>(rng: &mut R) -> AssetPosition {
    let price: f64 = rng.random_range(5.0..500.0);
    let lots = (0..rng.random_range(1..=6usize))
        .map(|j| {
            TaxLot::new(
                format!("L{j}"),
                rng.random_range(0.0..200.0),
                price * rng.random_range(0.3..2.0),
                asof() - Days::new(rng.random_range(1..1500u64)),
            )
        })
        .collect();
    AssetPosition::new("A", price, lots)
}

pub fn arb_position() -> impl Strategy<Value = AssetPosition> {
    (
        5.0..500.0f64,
        prop::collection::vec((0.0..200.0f64, 0.3..2.0f64, 1..1500u64), 1..=6),
    )
        .prop_map(|(price, lots)| {
            let lots = lots
                .into_iter()
                .enumerate()
                .map(|(j, (q, b, age))| TaxLot::new(format!("L{j}"), q, price * b, asof() - Days::new(age)))
                .collect();
            AssetPosition::new("A", price, lots)
        })
}

/// Continuous piecewise quadratic on `[-sell_len, buy_len]`, convex on each
/// side of zero. The slopes at zero are drawn independently, so the kink at
/// zero is concave about two thirds of the time.
pub fn random_half_line_convex<R: RngExt + ?Sized>(rng: &mut R) -> PiecewiseQuadratic {
    let v0: f64 = rng.random_range(-1.0..1.0);
    let d_sell: f64 = rng.random_range(-1.0..2.0);
    let d_buy: f64 = rng.random_range(-2.0..1.0);
    let mut pieces = Vec::new();

    // Sell side, from zero outward: the derivative decreases going left.
    let (mut r, mut v, mut d) = (0.0, v0, d_sell);
    for _ in 0..rng.random_range(1..=4usize) {
        let a: f64 = if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..2.0) };
        let l = r - rng.random_range(0.1..1.5);
        let b = d - 2.0 * a * r;
        let c = v - a * r * r - b * r;
        pieces.push(QuadPiece::new(l, r, a, b, c));
        v = a * l * l + b * l + c;
        d = 2.0 * a * l + b - rng.random_range(0.0..1.0);
        r = l;
    }
    pieces.reverse();

    let (mut l, mut v, mut d) = (0.0, v0, d_buy);
    for _ in 0..rng.random_range(1..=4usize) {
        let a: f64 = if rng.random_bool(0.3) { 0.0 } else { rng.random_range(0.0..2.0) };
        let r = l + rng.random_range(0.1..1.5);
        let b = d - 2.0 * a * l;
        let c = v - a * l * l - b * l;
        pieces.push(QuadPiece::new(l, r, a, b, c));
        v = a * r * r + b * r + c;
        d = 2.0 * a * r + b + rng.random_range(0.0..1.0);
        l = r;
    }
    PiecewiseQuadratic::new(pieces).expect("continuous by construction")
}

/// A separable cost in scaled units with a mix of loss and gain segments.
pub fn random_separable<R: RngExt + ?Sized>(rng: &mut R) -> SeparableCost {
    let quad = rng.random_range(0.05..5.0);
    let common: f64 = rng.random_range(-0.05..0.05);
    let tc = rng.random_range(0.0..0.002);
    let segments = (0..rng.random_range(1..=5usize))
        .map(|_| SellSegment {
            width: rng.random_range(0.005..0.05),
            cost: rng.random_range(-0.15..0.1),
        })
        .collect();
    SeparableCost::new(quad, common + tc, common - tc, rng.random_range(0.0..0.001), segments, rng.random_range(0.05..1.0))
        .expect("valid cost")
}

/// Relabels the assets: new asset `k` is old asset `perm[k]`.
pub fn permute(data: &TamProblemData, perm: &[usize]) -> TamProblemData {
    let n = data.n();
    let mut inv = vec![0; n];
    for (k, &i) in perm.iter().enumerate() {
        inv[i] = k;
    }
    let pick = |v: &[f64]| perm.iter().map(|&i| v[i]).collect::<Vec<_>>();
    let mut out = data.clone();
    out.alpha = pick(&data.alpha);
    out.benchmark = pick(&data.benchmark);
    out.initial_holdings = pick(&data.initial_holdings);
    out.spreads = pick(&data.spreads);
    out.positions = perm.iter().map(|&i| data.positions[i].clone()).collect();
    out.risk_model.specific_var = pick(&data.risk_model.specific_var);
    out.risk_model.exposures = data.risk_model.exposures.select_rows(perm);
    let remap = |rows: &[LinearConstraint]| {
        rows.iter()
            .map(|r| LinearConstraint {
                coefs: r.coefs.iter().map(|&(i, a)| (inv[i], a)).collect(),
                ..r.clone()
            })
            .collect()
    };
    out.trade_constraints.rows = remap(&data.trade_constraints.rows);
    out.holding_constraints.rows = remap(&data.holding_constraints.rows);
    out
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Checks the per-period invariants of a backtest and recomputes the
/// cumulative liability from the trade log.
pub fn check_backtest(
    result: &taxopt::backtest::BacktestResult,
    tax: &taxopt::ledger::TaxParameters,
) -> Result<(), String> {
    use std::collections::HashSet;
    use taxopt::backtest::Side;

    for p in &result.periods {
        let s = p.account_value;
        let net: f64 = p.u_optimal.iter().sum();
        if (net - (p.cash_init - p.cash_des)).abs() > 1e-6 * s {
            return Err(format!("{}: 1'u = {net}, cash requires {}", p.date, p.cash_init - p.cash_des));
        }
        for (i, (&h, &e)) in p.post_holdings.iter().zip(&p.expected_holdings).enumerate() {
            if h < -1e-9 * s {
                return Err(format!("{}: asset {i} short at {h}", p.date));
            }
            if (h - e).abs() > 1e-6 * (1.0 + e.abs()) {
                return Err(format!("{}: asset {i} ledger {h} vs holdings {e}", p.date));
            }
        }
    }
    if let Some(p) = result.final_positions.iter().find(|p| p.lots.iter().any(|l| l.quantity < 0.0)) {
        return Err(format!("negative lot in {}", p.asset_id));
    }

    let buys: HashSet<_> = result
        .trades
        .iter()
        .filter(|t| t.side == Side::Buy)
        .map(|t| (t.date, t.asset_id.as_str()))
        .collect();
    if let Some(t) = result.trades.iter().find(|t| t.side != Side::Buy && buys.contains(&(t.date, t.asset_id.as_str()))) {
        return Err(format!("{}: {} bought and sold on the same date", t.date, t.asset_id));
    }

    let mut taxes: Vec<(NaiveDate, f64)> = Vec::new();
    for t in result.trades.iter().filter(|t| t.side != Side::Buy) {
        let long = t
            .acquisition_date
            .checked_add_months(chrono::Months::new(12 * tax.long_term_years))
            .is_some_and(|d| d < t.date);
        let rate = if long { tax.rho_lt } else { tax.rho_st };
        taxes.push((t.date, rate * (t.price - t.basis) * t.shares));
    }
    let scale = 1.0 + taxes.iter().map(|(_, x)| x.abs()).sum::<f64>();
    for p in &result.periods {
        let recomputed: f64 = taxes.iter().filter(|(d, _)| *d <= p.date).map(|(_, x)| x).sum();
        if (recomputed - p.cum_tax_liability).abs() > 1e-6 * scale {
            return Err(format!("{}: cumulative liability {} vs recomputed {recomputed}", p.date, p.cum_tax_liability));
        }
    }
    let total: f64 = taxes.iter().map(|(_, x)| x).sum();
    if (total - result.cum_tax_liability).abs() > 1e-6 * scale {
        return Err(format!("final liability {} vs recomputed {total}", result.cum_tax_liability));
    }
    Ok(())
}
