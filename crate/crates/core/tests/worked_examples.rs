mod common;

use approx::assert_abs_diff_eq;
use chrono::NaiveDate;

use taxopt::backtest::{BacktestConfig, active_risk, round_shares};
use taxopt::conic::ClarabelBackend;
use taxopt::heuristic::{RoundingConfig, RoundingMode, heuristic_solve};
use taxopt::instance::{InstanceSpec, random_instance};
use taxopt::ledger::{
    AssetPosition, TaxLot, TaxParameters, Term, liability_pwl, liquidate, lot_tax_rate, ltfo_allocate, tax_liability,
};
use taxopt::oracle::{enumerate_signs_solve, envelope_bruteforce};
use taxopt::piecewise::{
    AssetCostInputs, PiecewiseQuadratic, QuadPiece, SellSegment, SeparableCost, approximate_tax, build_separable_cost,
    convex_envelope,
};
use taxopt::relaxation::{fixed_point_envelope_check, solve_relaxation};
use taxopt::tam::{FactorRiskModel, cash_target};

fn d(s: &str) -> NaiveDate {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
}

fn asof() -> NaiveDate {
    d("2019-01-02")
}

fn two_lot() -> AssetPosition {
    AssetPosition::new(
        "X",
        100.0,
        vec![
            TaxLot::new("A", 100.0, 90.0, d("2016-03-01")),
            TaxLot::new("B", 50.0, 120.0, d("2016-09-01")),
        ],
    )
}

fn bridge_example() -> PiecewiseQuadratic {
    PiecewiseQuadratic::new(vec![QuadPiece::new(-2.0, 0.0, 1.0, 1.0, 0.0), QuadPiece::new(0.0, 2.0, 1.0, 0.0, 0.0)]).unwrap()
}

#[test]
fn defaults_follow_the_published_setup() {
    let tax = TaxParameters::default();
    assert_eq!((tax.rho_lt, tax.rho_st), (0.238, 0.408));
    let cfg = BacktestConfig::default();
    assert_eq!(cfg.initial_cash, 1_000_000.0);
    assert_eq!(cfg.eta, 0.005);
    assert_eq!(cfg.gamma_risk_tilde, 200.0);
    assert_eq!((cfg.gamma_tc, cfg.gamma_tax), (1.0, 1.0));
    assert_eq!(cfg.kappa, 0.0005);
    let r = RoundingConfig::default();
    assert_eq!((r.mode, r.candidates, r.fallback_to_deterministic), (RoundingMode::Randomized, 1, true));
}

#[test]
fn lot_rates() {
    let tax = TaxParameters::default();
    let gain = TaxLot::new("g", 1.0, 90.0, d("2015-01-01"));
    let loss = TaxLot::new("l", 1.0, 125.0, d("2018-12-01"));
    assert_abs_diff_eq!(lot_tax_rate(&gain, 100.0, Term::Long, &tax).unwrap(), 0.0238, epsilon = 1e-12);
    assert_abs_diff_eq!(lot_tax_rate(&loss, 100.0, Term::Short, &tax).unwrap(), -0.1020, epsilon = 1e-12);
}

#[test]
fn two_lot_hand_trace() {
    let tax = TaxParameters::default();
    let pos = two_lot();
    let alloc = ltfo_allocate(&pos, 6000.0, asof(), &tax).unwrap();
    assert_eq!(alloc.entries.len(), 2);
    assert_eq!(alloc.entries[0].0, "B");
    assert_abs_diff_eq!(alloc.entries[0].1, 5000.0, epsilon = 1e-9);
    assert_eq!(alloc.entries[1].0, "A");
    assert_abs_diff_eq!(alloc.entries[1].1, 1000.0, epsilon = 1e-9);
    assert_abs_diff_eq!(tax_liability(&pos, -6000.0, asof(), &tax).unwrap(), -214.20, epsilon = 1e-9);
    assert_abs_diff_eq!(tax_liability(&pos, -15000.0, asof(), &tax).unwrap(), 0.0, epsilon = 1e-9);

    let l = liability_pwl(&pos, asof(), &tax).unwrap();
    assert_abs_diff_eq!(l.eval(-5000.0).unwrap(), -238.0, epsilon = 1e-9);
    assert_abs_diff_eq!(l.right_derivative(-2500.0).unwrap(), 0.0476, epsilon = 1e-12);
    assert_abs_diff_eq!(l.right_derivative(-10000.0).unwrap(), -0.0238, epsilon = 1e-12);

    let (proceeds, liability) = liquidate(&pos, asof(), &tax).unwrap();
    assert_abs_diff_eq!(proceeds, 15000.0, epsilon = 1e-9);
    assert_abs_diff_eq!(liability, 0.0, epsilon = 1e-9);
    let single = AssetPosition::new("Y", 100.0, vec![TaxLot::new("1", 10.0, 120.0, d("2016-01-04"))]);
    let (proceeds, liability) = liquidate(&single, asof(), &tax).unwrap();
    assert_abs_diff_eq!(proceeds, 1000.0, epsilon = 1e-9);
    assert_abs_diff_eq!(liability, -47.60, epsilon = 1e-9);
}

fn two_lot_cost() -> (PiecewiseQuadratic, PiecewiseQuadratic) {
    let tax = TaxParameters::default();
    let specific_var = 0.04;
    let inputs = AssetCostInputs {
        alpha: 0.0,
        gamma_risk: 1e-7 / specific_var,
        specific_var,
        h_init: 15000.0,
        h_bench: 15000.0,
        gamma_tc: 1.0,
        kappa: 0.0005,
        gamma_tax: 1.0,
    };
    let f = build_separable_cost(&inputs, &two_lot(), asof(), &tax, 15000.0).unwrap().to_pwq().unwrap();
    let l = taxopt::ledger::liability_pwl_capped(&two_lot(), asof(), &tax, 15000.0).unwrap();
    (f, l)
}

#[test]
fn separable_cost_term_by_term() {
    let (f, _) = two_lot_cost();
    assert_abs_diff_eq!(f.eval(-5000.0).unwrap(), 2.5 + 2.5 - 238.0, epsilon = 1e-9);
}

#[test]
fn loss_lot_envelope_dips_below_zero() {
    let (f, l) = two_lot_cost();
    let hull = envelope_bruteforce(&f, 10_000).unwrap();
    let zero = hull.xs.iter().enumerate().min_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).unwrap().0;
    assert!(hull.hull[zero] < 0.0);
    let env = convex_envelope(&f).unwrap();
    assert!(env.eval(0.0).unwrap() < 0.0);
    let l_hat = approximate_tax(&l, &f, &env, 1.0).unwrap();
    assert_abs_diff_eq!(l_hat.eval(0.0).unwrap(), env.eval(0.0).unwrap() - f.eval(0.0).unwrap(), epsilon = 1e-9);
    assert!(l_hat.eval(0.0).unwrap() < 0.0);
    assert_eq!(l.eval(0.0).unwrap(), 0.0);
}

#[test]
fn bridge_by_hand() {
    let f = bridge_example();
    let env = convex_envelope(&f).unwrap();
    let b = env.bridge().unwrap();
    assert_abs_diff_eq!(b.sell_point, -0.25, epsilon = 1e-9);
    assert_abs_diff_eq!(b.buy_point, 0.25, epsilon = 1e-9);
    assert_abs_diff_eq!(b.slope, 0.5, epsilon = 1e-9);
    assert_abs_diff_eq!(env.eval(0.0).unwrap(), -0.0625, epsilon = 1e-9);
    assert_abs_diff_eq!(env.eval(0.1).unwrap(), 0.05 - 0.0625, epsilon = 1e-9);
    let dec = env.decompose(0.0).unwrap();
    assert_abs_diff_eq!(dec.theta, 0.5, epsilon = 1e-9);
    assert_abs_diff_eq!(dec.buy_point, 0.25, epsilon = 1e-9);
    assert_abs_diff_eq!(dec.sell_point, -0.25, epsilon = 1e-9);

    let hull = envelope_bruteforce(&f, 10_000).unwrap();
    let mid = hull.xs.iter().enumerate().min_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).unwrap().0;
    assert_abs_diff_eq!(hull.hull[mid], -0.0625, epsilon = 1e-3);

    let cost = SeparableCost::new(1.0, 0.0, 1.0, 0.0, vec![SellSegment { width: 2.0, cost: 0.0 }], 2.0).unwrap();
    let via_program = fixed_point_envelope_check(&cost, 0.0, &ClarabelBackend::default()).unwrap();
    assert_abs_diff_eq!(via_program, -0.0625, epsilon = 1e-6);
}

#[test]
fn cash_and_risk_arithmetic() {
    assert_eq!(cash_target(&[], 1_000_000.0, 0.005), 5_000.0);
    assert_eq!(cash_target(&[0.0], 200.0, 0.5), 100.0);
    let model = FactorRiskModel::diagonal(vec![4e-4, 4e-4]);
    assert_abs_diff_eq!(active_risk(&model, &[1000.0, 0.0], 1e6), 2e-5, epsilon = 1e-15);
    assert_eq!(round_shares(1234.56, 10.0, 0.0), 123.0);
}

#[test]
fn three_asset_instance_is_solved_exactly() {
    let data = random_instance(
        &InstanceSpec {
            n: 3,
            k: 1,
            loss_assets: 1,
            ..InstanceSpec::default()
        },
        17,
    );
    let solver = ClarabelBackend::default();
    let oracle = enumerate_signs_solve(&data, 12, &solver).unwrap();
    assert_eq!(oracle.patterns, 2);
    let best = oracle.pattern_utilities.iter().filter_map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(best, oracle.best_utility);
    let relax = solve_relaxation(&data, &solver).unwrap();
    assert!(relax.upper_bound >= oracle.best_utility - 1e-6 * (1.0 + oracle.best_utility.abs()));
    let h = heuristic_solve(&data, &RoundingConfig::default(), &solver).unwrap();
    assert!((h.report.utility - oracle.best_utility).abs() <= 1e-6 * (1.0 + oracle.best_utility.abs()));
}
