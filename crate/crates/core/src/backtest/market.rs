use chrono::{Datelike, Days, Months, NaiveDate, Weekday};
use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::BacktestError;
use crate::instance::random_risk_model;
use crate::tam::FactorRiskModel;

/// Exposures and specific variances in effect from `date` on.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskSnapshot {
    pub date: NaiveDate,
    /// `n x k`, rows in asset order.
    pub exposures: DMatrix<f64>,
    pub specific_var: Vec<f64>,
}

/// Daily market history. Row-major by date: `prices[d][i]` is asset `i` on
/// `dates[d]`; `None` means the asset is not listed that day.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketData {
    pub dates: Vec<NaiveDate>,
    pub assets: Vec<String>,
    pub prices: Vec<Vec<Option<f64>>>,
    pub dividends: Vec<Vec<f64>>,
    pub in_benchmark: Vec<Vec<bool>>,
    pub benchmark_weights: Vec<Vec<f64>>,
    pub factor_cov: DMatrix<f64>,
    pub risk: Vec<RiskSnapshot>,
}

impl MarketData {
    pub fn n(&self) -> usize {
        self.assets.len()
    }

    pub fn k(&self) -> usize {
        self.factor_cov.nrows()
    }

    pub fn validate(&self) -> Result<(), BacktestError> {
        let bad = |m: String| Err(BacktestError::MissingData(m));
        if self.assets.is_empty() {
            return Err(BacktestError::EmptyUniverse);
        }
        if self.dates.is_empty() {
            return bad("market data has no dates".into());
        }
        if self.dates.windows(2).any(|w| w[0] >= w[1]) {
            return bad("dates must be strictly increasing".into());
        }
        let (t, n) = (self.dates.len(), self.n());
        for (name, rows, widths) in [
            ("prices", self.prices.len(), self.prices.iter().map(Vec::len).collect::<Vec<_>>()),
            ("dividends", self.dividends.len(), self.dividends.iter().map(Vec::len).collect()),
            ("benchmark flags", self.in_benchmark.len(), self.in_benchmark.iter().map(Vec::len).collect()),
            ("benchmark weights", self.benchmark_weights.len(), self.benchmark_weights.iter().map(Vec::len).collect()),
        ] {
            if rows != t || widths.iter().any(|&w| w != n) {
                return bad(format!("{name} must be {t} dates by {n} assets"));
            }
        }
        for d in 0..t {
            for i in 0..n {
                if let Some(p) = self.prices[d][i] {
                    if !(p > 0.0) || !p.is_finite() {
                        return bad(format!("{} {}: price must be positive, got {p}", self.dates[d], self.assets[i]));
                    }
                }
                let w = self.benchmark_weights[d][i];
                if !(w >= 0.0) {
                    return bad(format!("{} {}: negative benchmark weight", self.dates[d], self.assets[i]));
                }
            }
            let total: f64 = self.benchmark_weights[d].iter().sum();
            if (total - 1.0).abs() > 1e-6 {
                return bad(format!("{}: benchmark weights sum to {total}", self.dates[d]));
            }
        }
        let k = self.k();
        if self.factor_cov.ncols() != k {
            return bad("factor covariance must be square".into());
        }
        if self.risk.is_empty() {
            return bad("no risk model snapshot".into());
        }
        for r in &self.risk {
            if r.exposures.nrows() != n || r.exposures.ncols() != k || r.specific_var.len() != n {
                return bad(format!("risk snapshot {} has wrong dimensions", r.date));
            }
        }
        if self.risk.windows(2).any(|w| w[0].date >= w[1].date) {
            return bad("risk snapshots must be in increasing date order".into());
        }
        Ok(())
    }

    /// Last date index on which each asset has a price.
    pub fn last_listed(&self) -> Vec<Option<usize>> {
        (0..self.n())
            .map(|i| (0..self.dates.len()).rev().find(|&d| self.prices[d][i].is_some()))
            .collect()
    }

    /// Most recent price at or before date index `d`.
    pub fn last_close(&self, d: usize, i: usize) -> Option<f64> {
        (0..=d).rev().find_map(|e| self.prices[e][i])
    }

    /// Risk model in effect on `date`.
    pub fn risk_at(&self, date: NaiveDate) -> Option<&RiskSnapshot> {
        self.risk.iter().rev().find(|r| r.date <= date)
    }

    /// Full `n`-asset risk model on `date`.
    pub fn risk_model_at(&self, date: NaiveDate) -> Option<FactorRiskModel> {
        self.risk_at(date).map(|r| FactorRiskModel {
            exposures: r.exposures.clone(),
            factor_cov: self.factor_cov.clone(),
            specific_var: r.specific_var.clone(),
        })
    }
}

/// Parameters of the synthetic market.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n: usize,
    pub k: usize,
    pub months: u32,
    pub start: NaiveDate,
    /// Multiplies realized returns; 0 gives constant prices.
    pub return_scale: f64,
    /// Assets outside the benchmark.
    pub non_members: usize,
    /// Assets delisted at a random date.
    pub delistings: usize,
}

impl SyntheticSpec {
    pub fn new(seed: u64, n: usize, k: usize, months: u32) -> Self {
        Self {
            seed,
            n,
            k,
            months,
            start: NaiveDate::from_ymd_opt(2013, 8, 1).expect("valid date"),
            return_scale: 1.0,
            non_members: 0,
            delistings: 0,
        }
    }
}

pub const TRADING_DAYS_PER_YEAR: f64 = 252.0;

/// Monday-to-Friday dates in `[start, end]`.
pub fn business_days(start: NaiveDate, end: NaiveDate) -> Vec<NaiveDate> {
    start
        .iter_days()
        .take_while(|d| *d <= end)
        .filter(|d| !matches!(d.weekday(), Weekday::Sat | Weekday::Sun))
        .collect()
}

/// Seeded synthetic market.
///
/// The risk model is annualized and fixed. Daily returns are
/// `r = X f + e` with `f ~ N(0, Sigma / 252)` and `e ~ N(0, D / 252)`,
/// independent across days, scaled by `return_scale`; prices are cumulative
/// products of `1 + r` from starting prices drawn uniformly in [20, 200].
/// Benchmark weights are lognormal and constant over time. Non-members carry
/// zero weight. Delisted assets have no prices from a uniformly drawn date
/// in the second half of the window onward and leave the benchmark then,
/// the remaining weights being renormalized. Dividends are zero.
pub fn synthetic_market(spec: &SyntheticSpec) -> Result<MarketData, BacktestError> {
    if spec.n == 0 || spec.k == 0 || spec.months == 0 {
        return Err(BacktestError::InvalidConfig("n, k and months must be at least 1".into()));
    }
    if spec.non_members >= spec.n {
        return Err(BacktestError::InvalidConfig("the benchmark needs at least one member".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, k) = (spec.n, spec.k);
    let model = random_risk_model(&mut rng, n, k);
    let end = spec
        .start
        .checked_add_months(Months::new(spec.months))
        .and_then(|d| d.checked_sub_days(Days::new(1)))
        .ok_or_else(|| BacktestError::InvalidConfig("date range overflow".into()))?;
    let dates = business_days(spec.start, end);

    let lognormal = LogNormal::new(0.0, 0.5).expect("valid lognormal");
    let mut weights: Vec<f64> = (0..n).map(|_| lognormal.sample(&mut rng)).collect();
    let members = n - spec.non_members;
    for w in weights.iter_mut().skip(members) {
        *w = 0.0;
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);

    let mut delist_at = vec![usize::MAX; n];
    for slot in delist_at.iter_mut().take(spec.delistings.min(n)) {
        *slot = rng.random_range(dates.len() / 2..dates.len());
    }
    let mut order: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let delist_at: Vec<usize> = order.iter().map(|&i| delist_at[i]).collect();

    let chol_f = model
        .factor_cov
        .clone()
        .cholesky()
        .ok_or_else(|| BacktestError::InvalidConfig("factor covariance is not positive definite".into()))?
        .l();
    let day = 1.0 / TRADING_DAYS_PER_YEAR;
    let mut price: Vec<f64> = (0..n).map(|_| rng.random_range(20.0..200.0)).collect();
    let mut prices = Vec::with_capacity(dates.len());
    for d in 0..dates.len() {
        if d > 0 {
            let z = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
            let f = &chol_f * z * day.sqrt();
            let common = &model.exposures * f;
            for i in 0..n {
                let e: f64 = rng.sample::<f64, _>(StandardNormal) * (model.specific_var[i] * day).sqrt();
                let r = spec.return_scale * (common[i] + e);
                price[i] *= (1.0 + r).max(1e-3);
            }
        }
        prices.push((0..n).map(|i| (d < delist_at[i]).then_some(price[i])).collect());
    }
    let t = dates.len();
    let mut in_benchmark = Vec::with_capacity(t);
    let mut benchmark_weights = Vec::with_capacity(t);
    for d in 0..t {
        let flags: Vec<bool> = (0..n).map(|i| i < members && d < delist_at[i]).collect();
        let mut w: Vec<f64> = (0..n).map(|i| if flags[i] { weights[i] } else { 0.0 }).collect();
        let total: f64 = w.iter().sum();
        if total > 0.0 {
            w.iter_mut().for_each(|x| *x /= total);
        }
        in_benchmark.push(flags);
        benchmark_weights.push(w);
    }
    Ok(MarketData {
        assets: (0..n).map(|i| format!("S{i:03}")).collect(),
        prices,
        dividends: vec![vec![0.0; n]; t],
        in_benchmark,
        benchmark_weights,
        factor_cov: model.factor_cov.clone(),
        risk: vec![RiskSnapshot {
            date: dates[0],
            exposures: model.exposures.clone(),
            specific_var: model.specific_var.clone(),
        }],
        dates,
    })
}

/// Annualized sample covariance of daily simple returns over dates where every asset trades.
pub fn realized_covariance(market: &MarketData) -> DMatrix<f64> {
    let n = market.n();
    let mut rets: Vec<DVector<f64>> = Vec::new();
    for d in 1..market.dates.len() {
        let (prev, cur) = (&market.prices[d - 1], &market.prices[d]);
        if let Some(r) = (0..n)
            .map(|i| Some(cur[i]? / prev[i]? - 1.0))
            .collect::<Option<Vec<f64>>>()
        {
            rets.push(DVector::from_vec(r));
        }
    }
    let m = rets.len().max(2) as f64;
    let mean = rets.iter().fold(DVector::zeros(n), |acc, r| acc + r) / m;
    let mut cov = DMatrix::zeros(n, n);
    for r in &rets {
        let c = r - &mean;
        cov += &c * c.transpose();
    }
    cov * (TRADING_DAYS_PER_YEAR / (m - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_valid() {
        let spec = SyntheticSpec {
            non_members: 2,
            delistings: 1,
            ..SyntheticSpec::new(3, 8, 2, 4)
        };
        let a = synthetic_market(&spec).unwrap();
        a.validate().unwrap();
        assert_eq!(a, synthetic_market(&spec).unwrap());
        assert_eq!(a.in_benchmark[0].iter().filter(|b| !**b).count(), 2);
        assert_eq!(a.last_listed().iter().filter(|l| **l != Some(a.dates.len() - 1)).count(), 1);
    }

    #[test]
    fn zero_returns_constant_prices() {
        let spec = SyntheticSpec {
            return_scale: 0.0,
            ..SyntheticSpec::new(1, 5, 2, 2)
        };
        let m = synthetic_market(&spec).unwrap();
        for d in 1..m.dates.len() {
            assert_eq!(m.prices[d], m.prices[0]);
        }
    }

    #[test]
    fn business_day_calendar() {
        let d = |s: &str| NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap();
        let days = business_days(d("2019-06-01"), d("2019-06-10"));
        assert_eq!(days.first(), Some(&d("2019-06-03")));
        assert_eq!(days.len(), 6);
    }
}
