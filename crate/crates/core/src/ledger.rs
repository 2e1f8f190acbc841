//! Tax-lot ledger: lot classification, least-tax-first-out allocation and
//! the exact per-asset tax liability function.

use chrono::{Months, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::piecewise::{PieceError, PiecewiseQuadratic, QuadPiece};

/// Absolute tolerance for dollar comparisons.
pub const DOLLAR_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LedgerError {
    #[error("trade date {asof} is before lot acquisition date {acquired}")]
    InvalidDate { asof: NaiveDate, acquired: NaiveDate },
    #[error("price must be positive, got {0}")]
    NonPositivePrice(f64),
    #[error("cannot sell ${requested:.6} of {asset_id}: only ${held:.6} held")]
    Oversell {
        asset_id: String,
        requested: f64,
        held: f64,
    },
    #[error("lot {lot_id} of {asset_id}: {reason}")]
    InvalidLot {
        asset_id: String,
        lot_id: String,
        reason: String,
    },
    #[error("duplicate lot id {lot_id} in {asset_id}")]
    DuplicateLot { asset_id: String, lot_id: String },
    #[error("allocation references unknown lot {0}")]
    UnknownLot(String),
    #[error("allocation inconsistent with trade: {0}")]
    InconsistentAllocation(String),
    #[error("invalid tax parameters: {0}")]
    InvalidParameters(String),
}

/// Capital-gains tax rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaxParameters {
    pub rho_lt: f64,
    pub rho_st: f64,
    /// Holding period, in calendar years, a lot must strictly exceed to be long term.
    pub long_term_years: u32,
}

impl Default for TaxParameters {
    fn default() -> Self {
        Self {
            rho_lt: 0.238,
            rho_st: 0.408,
            long_term_years: 1,
        }
    }
}

impl TaxParameters {
    pub fn new(rho_lt: f64, rho_st: f64) -> Result<Self, LedgerError> {
        let p = Self {
            rho_lt,
            rho_st,
            long_term_years: 1,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), LedgerError> {
        if !(0.0 < self.rho_lt && self.rho_lt <= self.rho_st && self.rho_st < 1.0) {
            return Err(LedgerError::InvalidParameters(format!(
                "need 0 < rho_lt <= rho_st < 1, got rho_lt={} rho_st={}",
                self.rho_lt, self.rho_st
            )));
        }
        Ok(())
    }

    pub fn rate(&self, term: Term) -> f64 {
        match term {
            Term::Long => self.rho_lt,
            Term::Short => self.rho_st,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Term {
    Long,
    Short,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxLot {
    pub lot_id: String,
    /// Shares held.
    pub quantity: f64,
    /// Cost basis in dollars per share.
    pub basis: f64,
    pub acquisition_date: NaiveDate,
}

impl TaxLot {
    pub fn new(lot_id: impl Into<String>, quantity: f64, basis: f64, acquisition_date: NaiveDate) -> Self {
        Self {
            lot_id: lot_id.into(),
            quantity,
            basis,
            acquisition_date,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetPosition {
    pub asset_id: String,
    pub price: f64,
    pub lots: Vec<TaxLot>,
}

/// Dollars sold from each lot for a single sale.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SellAllocation {
    pub entries: Vec<(String, f64)>,
}

impl SellAllocation {
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|(_, s)| s).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Long iff the acquisition date advanced by the holding period is strictly
/// before `asof`. Calendar arithmetic: Feb 29 + 1 year lands on Feb 28.
pub fn classify_term(lot: &TaxLot, asof: NaiveDate, params: &TaxParameters) -> Result<Term, LedgerError> {
    if asof < lot.acquisition_date {
        return Err(LedgerError::InvalidDate {
            asof,
            acquired: lot.acquisition_date,
        });
    }
    let anniversary = lot
        .acquisition_date
        .checked_add_months(Months::new(12 * params.long_term_years))
        .unwrap_or(NaiveDate::MAX);
    Ok(if anniversary < asof { Term::Long } else { Term::Short })
}

/// Tax liability per dollar sold, `rho * (1 - basis / price)`.
pub fn lot_tax_rate(lot: &TaxLot, price: f64, term: Term, params: &TaxParameters) -> Result<f64, LedgerError> {
    if !(price > 0.0) {
        return Err(LedgerError::NonPositivePrice(price));
    }
    Ok(params.rate(term) * (1.0 - lot.basis / price))
}

/// A lot annotated with what the allocation needs: its dollar value and rate.
#[derive(Debug, Clone, PartialEq)]
pub struct RatedLot {
    pub lot_id: String,
    pub value: f64,
    pub rate: f64,
    pub term: Term,
    pub acquisition_date: NaiveDate,
}

impl AssetPosition {
    pub fn new(asset_id: impl Into<String>, price: f64, lots: Vec<TaxLot>) -> Self {
        Self {
            asset_id: asset_id.into(),
            price,
            lots,
        }
    }

    pub fn empty(asset_id: impl Into<String>, price: f64) -> Self {
        Self::new(asset_id, price, Vec::new())
    }

    pub fn shares(&self) -> f64 {
        self.lots.iter().map(|l| l.quantity).sum()
    }

    /// Dollar value of the holding at the current price.
    pub fn holding(&self) -> f64 {
        self.price * self.shares()
    }

    pub fn validate(&self) -> Result<(), LedgerError> {
        if !(self.price > 0.0) || !self.price.is_finite() {
            return Err(LedgerError::NonPositivePrice(self.price));
        }
        let mut seen = std::collections::HashSet::new();
        for lot in &self.lots {
            let bad = |reason: &str| LedgerError::InvalidLot {
                asset_id: self.asset_id.clone(),
                lot_id: lot.lot_id.clone(),
                reason: reason.to_string(),
            };
            if !(lot.quantity >= 0.0) || !lot.quantity.is_finite() {
                return Err(bad("quantity must be nonnegative"));
            }
            if !(lot.basis > 0.0) || !lot.basis.is_finite() {
                return Err(bad("basis must be positive"));
            }
            if !seen.insert(lot.lot_id.as_str()) {
                return Err(LedgerError::DuplicateLot {
                    asset_id: self.asset_id.clone(),
                    lot_id: lot.lot_id.clone(),
                });
            }
        }
        Ok(())
    }

    /// Lots in LTFO order: ascending rate, then earliest acquisition, then lot id.
    pub fn rated_lots(&self, asof: NaiveDate, params: &TaxParameters) -> Result<Vec<RatedLot>, LedgerError> {
        let mut rated = self
            .lots
            .iter()
            .filter(|l| l.quantity > 0.0)
            .map(|l| {
                let term = classify_term(l, asof, params)?;
                Ok(RatedLot {
                    lot_id: l.lot_id.clone(),
                    value: l.quantity * self.price,
                    rate: lot_tax_rate(l, self.price, term, params)?,
                    term,
                    acquisition_date: l.acquisition_date,
                })
            })
            .collect::<Result<Vec<_>, LedgerError>>()?;
        rated.sort_by(|a, b| {
            a.rate
                .total_cmp(&b.rate)
                .then(a.acquisition_date.cmp(&b.acquisition_date))
                .then_with(|| a.lot_id.cmp(&b.lot_id))
        });
        Ok(rated)
    }

    /// True if any lot is held at a loss (negative tax rate).
    pub fn has_loss_lot(&self) -> bool {
        self.lots.iter().any(|l| l.quantity > 0.0 && l.basis > self.price)
    }

    fn check_sale(&self, sell_dollars: f64) -> Result<f64, LedgerError> {
        let held = self.holding();
        if sell_dollars > held + DOLLAR_TOL * held.max(1.0) {
            return Err(LedgerError::Oversell {
                asset_id: self.asset_id.clone(),
                requested: sell_dollars,
                held,
            });
        }
        Ok(sell_dollars.clamp(0.0, held))
    }
}

/// Sells in ascending tax-rate order. Greedy is optimal for this
/// single-constraint box LP.
pub fn ltfo_allocate(
    pos: &AssetPosition,
    sell_dollars: f64,
    asof: NaiveDate,
    params: &TaxParameters,
) -> Result<SellAllocation, LedgerError> {
    let mut remaining = pos.check_sale(sell_dollars)?;
    let mut entries = Vec::new();
    if remaining <= 0.0 {
        return Ok(SellAllocation { entries });
    }
    for lot in pos.rated_lots(asof, params)? {
        if remaining <= 0.0 {
            break;
        }
        let take = remaining.min(lot.value);
        if take > 0.0 {
            entries.push((lot.lot_id, take));
            remaining -= take;
        }
    }
    // `check_sale` clamps to the holding, so anything left is roundoff.
    if let Some(e) = entries.last_mut() {
        if remaining > 0.0 {
            e.1 += remaining;
        }
    }
    Ok(SellAllocation { entries })
}

/// Realized liability of an allocation, `sum_j T_j s_j`.
pub fn allocation_liability(
    pos: &AssetPosition,
    alloc: &SellAllocation,
    asof: NaiveDate,
    params: &TaxParameters,
) -> Result<f64, LedgerError> {
    alloc
        .entries
        .iter()
        .map(|(id, s)| {
            let lot = pos
                .lots
                .iter()
                .find(|l| &l.lot_id == id)
                .ok_or_else(|| LedgerError::UnknownLot(id.clone()))?;
            let term = classify_term(lot, asof, params)?;
            Ok(lot_tax_rate(lot, pos.price, term, params)? * s)
        })
        .sum()
}

/// Exact tax liability of trading `u` dollars: zero for buys, LTFO cost for sells.
pub fn tax_liability(pos: &AssetPosition, u: f64, asof: NaiveDate, params: &TaxParameters) -> Result<f64, LedgerError> {
    if u >= 0.0 {
        return Ok(0.0);
    }
    let alloc = ltfo_allocate(pos, -u, asof, params)?;
    allocation_liability(pos, &alloc, asof, params)
}

/// The liability as a piecewise-linear function on `[-holding, +inf)`.
pub fn liability_pwl(pos: &AssetPosition, asof: NaiveDate, params: &TaxParameters) -> Result<PiecewiseQuadratic, LedgerError> {
    liability_pwl_capped(pos, asof, params, f64::INFINITY)
}

/// As [`liability_pwl`] with the buy side truncated at `cap`.
pub fn liability_pwl_capped(
    pos: &AssetPosition,
    asof: NaiveDate,
    params: &TaxParameters,
    cap: f64,
) -> Result<PiecewiseQuadratic, LedgerError> {
    let rated = pos.rated_lots(asof, params)?;
    let mut pieces = Vec::with_capacity(rated.len() + 1);
    // Walk outward from zero: on [-(c + value), -c], L(u) = acc + rate * (-u - c).
    let mut consumed = 0.0;
    let mut acc = 0.0;
    for lot in &rated {
        if lot.value <= DOLLAR_TOL {
            continue;
        }
        let hi = -consumed;
        let lo = -(consumed + lot.value);
        pieces.push(QuadPiece::new(lo, hi, 0.0, -lot.rate, acc - lot.rate * consumed));
        acc += lot.rate * lot.value;
        consumed += lot.value;
    }
    pieces.reverse();
    if cap > 0.0 {
        pieces.push(QuadPiece::new(0.0, cap, 0.0, 0.0, 0.0));
    } else if pieces.is_empty() {
        pieces.push(QuadPiece::new(0.0, 0.0, 0.0, 0.0, 0.0));
    }
    PiecewiseQuadratic::new(pieces).map_err(|e: PieceError| LedgerError::InconsistentAllocation(e.to_string()))
}

/// Trade applied to one position.
#[derive(Debug, Clone, PartialEq)]
pub enum LotTrade<'a> {
    Buy { dollars: f64, lot_id: String },
    Sell(&'a SellAllocation),
}

/// One lot-level fill produced by [`apply_trade`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LotFill {
    pub lot_id: String,
    /// Signed shares: positive for buys, negative for sells.
    pub shares: f64,
    pub price: f64,
    pub basis: f64,
    pub acquisition_date: NaiveDate,
    pub term: Option<Term>,
    pub realized_tax: f64,
}

/// Applies a buy or an allocated sell at `exec_price`; returns the new
/// position, the fills and the realized liability.
pub fn apply_trade(
    pos: &AssetPosition,
    trade: &LotTrade<'_>,
    trade_date: NaiveDate,
    exec_price: f64,
    params: &TaxParameters,
) -> Result<(AssetPosition, Vec<LotFill>, f64), LedgerError> {
    if !(exec_price > 0.0) {
        return Err(LedgerError::NonPositivePrice(exec_price));
    }
    let mut next = pos.clone();
    next.price = exec_price;
    match trade {
        LotTrade::Buy { dollars, lot_id } => {
            if *dollars < 0.0 {
                return Err(LedgerError::InconsistentAllocation(format!("negative buy {dollars}")));
            }
            if *dollars == 0.0 {
                return Ok((next, Vec::new(), 0.0));
            }
            if next.lots.iter().any(|l| &l.lot_id == lot_id) {
                return Err(LedgerError::DuplicateLot {
                    asset_id: pos.asset_id.clone(),
                    lot_id: lot_id.clone(),
                });
            }
            let shares = dollars / exec_price;
            next.lots.push(TaxLot::new(lot_id.clone(), shares, exec_price, trade_date));
            let fill = LotFill {
                lot_id: lot_id.clone(),
                shares,
                price: exec_price,
                basis: exec_price,
                acquisition_date: trade_date,
                term: None,
                realized_tax: 0.0,
            };
            Ok((next, vec![fill], 0.0))
        }
        LotTrade::Sell(alloc) => {
            let mut fills = Vec::with_capacity(alloc.entries.len());
            let mut total = 0.0;
            for (id, dollars) in &alloc.entries {
                if *dollars < 0.0 {
                    return Err(LedgerError::InconsistentAllocation(format!("negative sale from {id}")));
                }
                let lot = next
                    .lots
                    .iter_mut()
                    .find(|l| &l.lot_id == id)
                    .ok_or_else(|| LedgerError::UnknownLot(id.clone()))?;
                let shares = dollars / exec_price;
                if shares > lot.quantity * (1.0 + DOLLAR_TOL) + DOLLAR_TOL {
                    return Err(LedgerError::Oversell {
                        asset_id: pos.asset_id.clone(),
                        requested: *dollars,
                        held: lot.quantity * exec_price,
                    });
                }
                let term = classify_term(lot, trade_date, params)?;
                let tax = lot_tax_rate(lot, exec_price, term, params)? * dollars;
                lot.quantity = (lot.quantity - shares).max(0.0);
                if lot.quantity <= DOLLAR_TOL {
                    lot.quantity = 0.0;
                }
                fills.push(LotFill {
                    lot_id: id.clone(),
                    shares: -shares,
                    price: exec_price,
                    basis: lot.basis,
                    acquisition_date: lot.acquisition_date,
                    term: Some(term),
                    realized_tax: tax,
                });
                total += tax;
            }
            next.lots.retain(|l| l.quantity > 0.0);
            Ok((next, fills, total))
        }
    }
}

/// Sells the whole holding at the current price. Returns the cash proceeds
/// and the realized liability.
pub fn liquidate(pos: &AssetPosition, asof: NaiveDate, params: &TaxParameters) -> Result<(f64, f64), LedgerError> {
    let held = pos.holding();
    if held <= 0.0 {
        return Ok((0.0, 0.0));
    }
    Ok((held, tax_liability(pos, -held, asof, params)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn two_lot() -> AssetPosition {
        AssetPosition::new(
            "X",
            100.0,
            vec![
                TaxLot::new("A", 100.0, 90.0, d("2017-01-03")),
                TaxLot::new("B", 50.0, 120.0, d("2017-06-01")),
            ],
        )
    }

    const ASOF: &str = "2019-01-02";

    #[test]
    fn term_boundaries() {
        let p = TaxParameters::default();
        let lot = TaxLot::new("a", 1.0, 1.0, d("2018-03-15"));
        assert_eq!(classify_term(&lot, d("2019-03-16"), &p).unwrap(), Term::Long);
        assert_eq!(classify_term(&lot, d("2019-03-15"), &p).unwrap(), Term::Short);
        let lot2 = TaxLot::new("b", 1.0, 1.0, d("2019-01-02"));
        assert_eq!(classify_term(&lot2, d("2019-06-01"), &p).unwrap(), Term::Short);
        assert!(matches!(
            classify_term(&lot2, d("2018-12-31"), &p),
            Err(LedgerError::InvalidDate { .. })
        ));
    }

    #[test]
    fn leap_day_uses_calendar_years() {
        let p = TaxParameters::default();
        let lot = TaxLot::new("a", 1.0, 1.0, d("2020-02-29"));
        assert_eq!(classify_term(&lot, d("2021-02-28"), &p).unwrap(), Term::Short);
        assert_eq!(classify_term(&lot, d("2021-03-01"), &p).unwrap(), Term::Long);
    }

    #[test]
    fn tax_rates() {
        let p = TaxParameters::default();
        let a = TaxLot::new("a", 1.0, 90.0, d("2017-01-01"));
        assert_abs_diff_eq!(lot_tax_rate(&a, 100.0, Term::Long, &p).unwrap(), 0.0238, epsilon = 1e-12);
        let b = TaxLot::new("b", 1.0, 125.0, d("2017-01-01"));
        assert_abs_diff_eq!(lot_tax_rate(&b, 100.0, Term::Short, &p).unwrap(), -0.102, epsilon = 1e-12);
        let c = TaxLot::new("c", 1.0, 100.0, d("2017-01-01"));
        assert_eq!(lot_tax_rate(&c, 100.0, Term::Short, &p).unwrap(), 0.0);
        assert_eq!(lot_tax_rate(&c, 100.0, Term::Long, &p).unwrap(), 0.0);
        assert!(lot_tax_rate(&c, 0.0, Term::Long, &p).is_err());
    }

    #[test]
    fn ltfo_two_lot_example() {
        let p = TaxParameters::default();
        let pos = two_lot();
        let alloc = ltfo_allocate(&pos, 6000.0, d(ASOF), &p).unwrap();
        assert_eq!(alloc.entries.len(), 2);
        assert_eq!(alloc.entries[0].0, "B");
        assert_abs_diff_eq!(alloc.entries[0].1, 5000.0, epsilon = 1e-9);
        assert_eq!(alloc.entries[1].0, "A");
        assert_abs_diff_eq!(alloc.entries[1].1, 1000.0, epsilon = 1e-9);
        assert!(ltfo_allocate(&pos, 0.0, d(ASOF), &p).unwrap().is_empty());
        let single = AssetPosition::new("Y", 100.0, vec![TaxLot::new("only", 10.0, 50.0, d("2018-01-01"))]);
        let a = ltfo_allocate(&single, 1000.0, d(ASOF), &p).unwrap();
        assert_eq!(a.entries, vec![("only".to_string(), 1000.0)]);
        assert!(matches!(
            ltfo_allocate(&pos, 15000.1, d(ASOF), &p),
            Err(LedgerError::Oversell { .. })
        ));
    }

    #[test]
    fn liability_examples() {
        let p = TaxParameters::default();
        let pos = two_lot();
        assert_abs_diff_eq!(tax_liability(&pos, -6000.0, d(ASOF), &p).unwrap(), -214.2, epsilon = 1e-9);
        assert_eq!(tax_liability(&pos, 5000.0, d(ASOF), &p).unwrap(), 0.0);
        assert_abs_diff_eq!(tax_liability(&pos, -15000.0, d(ASOF), &p).unwrap(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn pwl_matches_ltfo() {
        let p = TaxParameters::default();
        let pos = two_lot();
        let l = liability_pwl(&pos, d(ASOF), &p).unwrap();
        assert_eq!(l.lo(), -15000.0);
        assert!(l.hi().is_infinite());
        assert_abs_diff_eq!(l.eval(-5000.0).unwrap(), -238.0, epsilon = 1e-9);
        assert_abs_diff_eq!(l.eval(0.0).unwrap(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(l.eval(1e7).unwrap(), 0.0, epsilon = 1e-12);
        let pieces = l.pieces();
        assert_abs_diff_eq!(pieces[1].b, 0.238 * 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(pieces[0].b, -0.0238, epsilon = 1e-12);
        for u in [-14999.0, -12000.0, -6000.0, -4000.0, -1.0] {
            assert_abs_diff_eq!(
                l.eval(u).unwrap(),
                tax_liability(&pos, u, d(ASOF), &p).unwrap(),
                epsilon = 1e-9
            );
        }
        assert!(l.eval(-15001.0).is_err());
        assert!(l.is_convex_on(-15000.0, 0.0));
    }

    #[test]
    fn pwl_no_lots_and_gain_only() {
        let p = TaxParameters::default();
        let empty = AssetPosition::empty("E", 10.0);
        let l = liability_pwl(&empty, d(ASOF), &p).unwrap();
        assert_eq!(l.lo(), 0.0);
        assert!(l.eval(-1.0).is_err());
        assert_eq!(l.eval(3.0).unwrap(), 0.0);

        let gains = AssetPosition::new(
            "G",
            100.0,
            vec![
                TaxLot::new("a", 10.0, 50.0, d("2017-01-01")),
                TaxLot::new("b", 10.0, 80.0, d("2018-11-01")),
            ],
        );
        let l = liability_pwl_capped(&gains, d(ASOF), &p, 5000.0).unwrap();
        assert!(l.is_convex_on(l.lo(), l.hi()));
        for k in 0..100 {
            let u = -2000.0 + 70.0 * k as f64;
            assert!(l.eval(u).unwrap() >= -1e-12);
        }
    }

    #[test]
    fn trades_update_lots() {
        let p = TaxParameters::default();
        let empty = AssetPosition::empty("E", 100.0);
        let (pos, fills, tax) = apply_trade(
            &empty,
            &LotTrade::Buy {
                dollars: 10_000.0,
                lot_id: "n1".into(),
            },
            d(ASOF),
            100.0,
            &p,
        )
        .unwrap();
        assert_eq!(tax, 0.0);
        assert_eq!(fills.len(), 1);
        assert_eq!(pos.lots.len(), 1);
        assert_abs_diff_eq!(pos.lots[0].quantity, 100.0, epsilon = 1e-12);
        assert_eq!(pos.lots[0].basis, 100.0);

        let alloc = SellAllocation {
            entries: vec![("n1".into(), 1000.0)],
        };
        let (partial, _, _) = apply_trade(&pos, &LotTrade::Sell(&alloc), d(ASOF), 100.0, &p).unwrap();
        assert_abs_diff_eq!(partial.lots[0].quantity, 90.0, epsilon = 1e-12);

        let all = SellAllocation {
            entries: vec![("n1".into(), 10_000.0)],
        };
        let (gone, _, _) = apply_trade(&pos, &LotTrade::Sell(&all), d(ASOF), 100.0, &p).unwrap();
        assert!(gone.lots.is_empty());

        let too_much = SellAllocation {
            entries: vec![("n1".into(), 10_001.0)],
        };
        assert!(apply_trade(&pos, &LotTrade::Sell(&too_much), d(ASOF), 100.0, &p).is_err());
    }

    #[test]
    fn liquidation() {
        let p = TaxParameters::default();
        assert_eq!(liquidate(&AssetPosition::empty("E", 1.0), d(ASOF), &p).unwrap(), (0.0, 0.0));
        let (cash, tax) = liquidate(&two_lot(), d(ASOF), &p).unwrap();
        assert_abs_diff_eq!(cash, 15000.0, epsilon = 1e-9);
        assert_abs_diff_eq!(tax, 0.0, epsilon = 1e-9);
        let loss = AssetPosition::new("L", 100.0, vec![TaxLot::new("l", 10.0, 120.0, d("2017-01-01"))]);
        let (cash, tax) = liquidate(&loss, d(ASOF), &p).unwrap();
        assert_abs_diff_eq!(cash, 1000.0, epsilon = 1e-9);
        assert_abs_diff_eq!(tax, -47.6, epsilon = 1e-9);
    }

    #[test]
    fn single_rate_is_hifo() {
        let p = TaxParameters::default();
        let pos = AssetPosition::new(
            "H",
            100.0,
            vec![
                TaxLot::new("a", 5.0, 70.0, d("2018-12-01")),
                TaxLot::new("b", 5.0, 130.0, d("2018-12-02")),
                TaxLot::new("c", 5.0, 100.0, d("2018-12-03")),
            ],
        );
        let order: Vec<_> = pos.rated_lots(d(ASOF), &p).unwrap().into_iter().map(|l| l.lot_id).collect();
        assert_eq!(order, ["b", "c", "a"]);
    }

    #[test]
    fn validation_rejects_bad_lots() {
        let mut pos = two_lot();
        pos.lots[0].basis = -1.0;
        assert!(pos.validate().is_err());
        let mut pos = two_lot();
        pos.lots[1].lot_id = "A".into();
        assert!(matches!(pos.validate(), Err(LedgerError::DuplicateLot { .. })));
    }
}
