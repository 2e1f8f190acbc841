use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{PieceError, PiecewiseQuadratic, QuadPiece};
use crate::ledger::{AssetPosition, LedgerError, TaxParameters};

/// A sell-side lot: `width` dollars available at `cost` per dollar sold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SellSegment {
    pub width: f64,
    pub cost: f64,
}

/// Structured form of a per-asset separable cost
///
/// ```text
/// f(x) = quad x^2 + buy_slope x + constant                    0 <= x <= buy_cap
/// f(x) = quad x^2 + sell_slope x + constant + min_s sum c_j s_j   x < 0
/// ```
///
/// where the sale `-x` is spread over the segments in ascending cost order.
/// Both branches are convex; the kink at zero is where convexity can fail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparableCost {
    pub quad: f64,
    pub buy_slope: f64,
    pub sell_slope: f64,
    pub constant: f64,
    /// Sorted by ascending cost.
    pub segments: Vec<SellSegment>,
    pub buy_cap: f64,
}

/// Per-asset coefficients entering `f_i`, in dollars.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssetCostInputs {
    pub alpha: f64,
    pub gamma_risk: f64,
    pub specific_var: f64,
    pub h_init: f64,
    pub h_bench: f64,
    pub gamma_tc: f64,
    pub kappa: f64,
    pub gamma_tax: f64,
}

impl SeparableCost {
    pub fn new(
        quad: f64,
        buy_slope: f64,
        sell_slope: f64,
        constant: f64,
        mut segments: Vec<SellSegment>,
        buy_cap: f64,
    ) -> Result<Self, PieceError> {
        if !(quad >= 0.0) {
            return Err(PieceError::Construction(format!("curvature must be nonnegative, got {quad}")));
        }
        if !(buy_cap >= 0.0) {
            return Err(PieceError::Construction(format!("buy cap must be nonnegative, got {buy_cap}")));
        }
        if segments.iter().any(|s| !(s.width >= 0.0)) {
            return Err(PieceError::Construction("segment widths must be nonnegative".into()));
        }
        segments.retain(|s| s.width > 0.0);
        segments.sort_by(|a, b| a.cost.total_cmp(&b.cost));
        Ok(Self {
            quad,
            buy_slope,
            sell_slope,
            constant,
            segments,
            buy_cap,
        })
    }

    /// Largest sale, `sum_j width_j`.
    pub fn sell_limit(&self) -> f64 {
        self.segments.iter().map(|s| s.width).sum()
    }

    pub fn lo(&self) -> f64 {
        -self.sell_limit()
    }

    pub fn hi(&self) -> f64 {
        self.buy_cap
    }

    /// Convex on the whole domain iff the left slope at zero does not exceed the right one.
    pub fn is_convex(&self) -> bool {
        match self.segments.first() {
            None => true,
            Some(_) if self.buy_cap <= 0.0 => true,
            Some(s) => self.sell_slope - s.cost <= self.buy_slope,
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64, PieceError> {
        if x < self.lo() - 1e-9 * self.lo().abs().max(1.0) || x > self.hi() {
            return Err(PieceError::OutOfDomain {
                x,
                lo: self.lo(),
                hi: self.hi(),
            });
        }
        let base = self.quad * x * x + self.constant;
        if x >= 0.0 {
            return Ok(base + self.buy_slope * x);
        }
        let mut left = -x;
        let mut lin = 0.0;
        for s in &self.segments {
            let take = left.min(s.width);
            lin += s.cost * take;
            left -= take;
            if left <= 0.0 {
                break;
            }
        }
        Ok(base + self.sell_slope * x + lin)
    }

    pub fn to_pwq(&self) -> Result<PiecewiseQuadratic, PieceError> {
        let mut pieces = Vec::with_capacity(self.segments.len() + 1);
        let mut consumed = 0.0;
        let mut acc = 0.0;
        // On [-(consumed + w), -consumed]: acc + cost * (-x - consumed).
        for s in &self.segments {
            let lo = -(consumed + s.width);
            let hi = -consumed;
            pieces.push(QuadPiece::new(
                lo,
                hi,
                self.quad,
                self.sell_slope - s.cost,
                self.constant + acc - s.cost * consumed,
            ));
            acc += s.cost * s.width;
            consumed += s.width;
        }
        pieces.reverse();
        if self.buy_cap > 0.0 || pieces.is_empty() {
            pieces.push(QuadPiece::new(0.0, self.buy_cap, self.quad, self.buy_slope, self.constant));
        }
        PiecewiseQuadratic::new(pieces)
    }
}

/// Assembles `f_i(u) = -alpha u + gamma_risk D (h_init - h_b + u)^2
/// + gamma_tc kappa |u| + gamma_tax L_i(u)` on `[-holding, buy_cap]`.
pub fn build_separable_cost(
    inputs: &AssetCostInputs,
    pos: &AssetPosition,
    asof: NaiveDate,
    tax: &TaxParameters,
    buy_cap: f64,
) -> Result<SeparableCost, BuildError> {
    if !(inputs.specific_var > 0.0) {
        return Err(BuildError::Piece(PieceError::Construction(format!(
            "specific variance must be positive, got {}",
            inputs.specific_var
        ))));
    }
    if !(inputs.kappa >= 0.0) {
        return Err(BuildError::Piece(PieceError::Construction("kappa must be nonnegative".into())));
    }
    if !buy_cap.is_finite() {
        return Err(BuildError::Piece(PieceError::Construction("buy cap must be finite".into())));
    }
    let held = pos.holding();
    if (held - inputs.h_init).abs() > 1e-6 * held.abs().max(1.0) {
        return Err(BuildError::Piece(PieceError::Construction(format!(
            "h_init {} does not match the lot value {}",
            inputs.h_init, held
        ))));
    }
    let quad = inputs.gamma_risk * inputs.specific_var;
    let offset = inputs.h_init - inputs.h_bench;
    let common = -inputs.alpha + 2.0 * quad * offset;
    let tc = inputs.gamma_tc * inputs.kappa;
    let segments = pos
        .rated_lots(asof, tax)?
        .into_iter()
        .map(|l| SellSegment {
            width: l.value,
            cost: inputs.gamma_tax * l.rate,
        })
        .collect();
    Ok(SeparableCost::new(
        quad,
        common + tc,
        common - tc,
        quad * offset * offset,
        segments,
        buy_cap,
    )?)
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum BuildError {
    #[error(transparent)]
    Piece(#[from] PieceError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}
