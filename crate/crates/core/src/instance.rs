//! Seeded random problem instances.
//!
//! Risk models are annualized: factor volatilities of 3% to 16%, specific
//! volatilities of 15% to 35%. Benchmark weights are lognormal; current
//! holdings perturb them multiplicatively. Assets chosen to carry losses get
//! one lot bought 5% to 60% above the current price; every other lot of
//! those assets has a basis between 60% and 130% of the price, and lots of
//! the remaining assets sit at a gain.

use chrono::{Days, NaiveDate};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::ledger::{AssetPosition, TaxLot, TaxParameters};
use crate::tam::{FactorRiskModel, LinearConstraintSet, RowTarget, TamProblemData, cash_target};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub n: usize,
    pub k: usize,
    /// Number of assets holding a lot at a loss.
    pub loss_assets: usize,
    pub account_value: f64,
    /// Share of the account invested before trading.
    pub invested: f64,
    /// Dispersion of holdings around the benchmark (log scale).
    pub drift: f64,
    /// Standard deviation of the expected returns.
    pub alpha_scale: f64,
    /// Number of assets that may not be bought.
    pub buy_restricted: usize,
    pub gamma_risk_tilde: f64,
    pub gamma_tc: f64,
    pub gamma_tax: f64,
    pub kappa: f64,
    pub eta: f64,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        Self {
            n: 30,
            k: 5,
            loss_assets: 3,
            account_value: 1_000_000.0,
            invested: 0.99,
            drift: 0.3,
            alpha_scale: 0.0,
            buy_restricted: 0,
            gamma_risk_tilde: 200.0,
            gamma_tc: 1.0,
            gamma_tax: 1.0,
            kappa: 0.0005,
            eta: 0.005,
        }
    }
}

pub fn asof() -> NaiveDate {
    NaiveDate::from_ymd_opt(2019, 1, 2).expect("valid date")
}

/// Annualized factor model with a market factor and `k - 1` style factors.
pub fn random_risk_model<R: RngExt + ?Sized>(rng: &mut R, n: usize, k: usize) -> FactorRiskModel {
    let std = Normal::new(0.0, 1.0).expect("valid normal");
    let exposures = DMatrix::from_fn(n, k, |_, f| {
        let z: f64 = std.sample(rng);
        if f == 0 { 1.0 + 0.25 * z } else { 0.5 * z }
    });
    let b = DMatrix::from_fn(k, k, |_, _| std.sample(rng));
    let mut corr = &b * b.transpose() / k.max(1) as f64 + DMatrix::identity(k, k);
    let diag: Vec<f64> = (0..k).map(|f| corr[(f, f)].sqrt()).collect();
    for r in 0..k {
        for c in 0..k {
            corr[(r, c)] /= diag[r] * diag[c];
        }
    }
    let vols: Vec<f64> = (0..k)
        .map(|f| if f == 0 { 0.16 } else { rng.random_range(0.03..0.08) })
        .collect();
    let factor_cov = DMatrix::from_fn(k, k, |r, c| vols[r] * vols[c] * corr[(r, c)]);
    let specific_var = (0..n).map(|_| rng.random_range(0.15f64..0.35).powi(2)).collect();
    FactorRiskModel {
        exposures,
        factor_cov,
        specific_var,
    }
}

pub fn random_instance(spec: &InstanceSpec, seed: u64) -> TamProblemData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.n;
    let s = spec.account_value;
    let risk_model = random_risk_model(&mut rng, n, spec.k);

    let lognormal = LogNormal::new(0.0, 0.5).expect("valid lognormal");
    let raw: Vec<f64> = (0..n).map(|_| lognormal.sample(&mut rng)).collect();
    let total: f64 = raw.iter().sum();
    let bench_w: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let tilt = Normal::new(0.0, spec.drift.max(1e-12)).expect("valid normal");
    let held_raw: Vec<f64> = bench_w.iter().map(|w| w * tilt.sample(&mut rng).exp()).collect();
    let held_total: f64 = held_raw.iter().sum();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut is_loss = vec![false; n];
    for &i in order.iter().take(spec.loss_assets.min(n)) {
        is_loss[i] = true;
    }

    let date = asof();
    let mut positions = Vec::with_capacity(n);
    let mut initial_holdings = Vec::with_capacity(n);
    for i in 0..n {
        let price: f64 = rng.random_range(20.0..200.0);
        let dollars = spec.invested * s * held_raw[i] / held_total;
        let lots_n = rng.random_range(1..=4usize);
        let shares: Vec<f64> = (0..lots_n).map(|_| rng.random_range(0.2..1.0)).collect();
        let share_total: f64 = shares.iter().sum();
        let mut lots = Vec::with_capacity(lots_n);
        for (j, w) in shares.iter().enumerate() {
            let basis = if is_loss[i] && j == 0 {
                price * rng.random_range(1.05..1.6)
            } else if is_loss[i] {
                price * rng.random_range(0.6..1.3)
            } else {
                price * rng.random_range(0.5..0.99)
            };
            let age = rng.random_range(20..900u64);
            lots.push(TaxLot::new(
                format!("{i}-{j}"),
                dollars * w / share_total / price,
                basis,
                date - Days::new(age),
            ));
        }
        let pos = AssetPosition::new(format!("S{i:03}"), price, lots);
        initial_holdings.push(pos.holding());
        positions.push(pos);
    }
    let cash_init = s - initial_holdings.iter().sum::<f64>();
    let account = initial_holdings.iter().sum::<f64>() + cash_init;
    let alpha_dist = Normal::new(0.0, spec.alpha_scale.max(1e-300)).expect("valid normal");
    let alpha = (0..n)
        .map(|_| if spec.alpha_scale > 0.0 { alpha_dist.sample(&mut rng) } else { 0.0 })
        .collect();

    let mut trade_constraints = LinearConstraintSet::new(RowTarget::Trade);
    order.shuffle(&mut rng);
    for &i in order.iter().take(spec.buy_restricted.min(n)) {
        trade_constraints.forbid_buy(i);
    }

    TamProblemData {
        alpha,
        benchmark: bench_w.iter().map(|w| w * account).collect(),
        cash_des: cash_target(&initial_holdings, cash_init, spec.eta),
        initial_holdings,
        cash_init,
        spreads: vec![spec.kappa; n],
        gamma_risk: spec.gamma_risk_tilde / account,
        gamma_tc: spec.gamma_tc,
        gamma_tax: spec.gamma_tax,
        risk_model,
        trade_constraints,
        holding_constraints: LinearConstraintSet::new(RowTarget::Holding),
        positions,
        tax: TaxParameters::default(),
        asof: date,
    }
}
