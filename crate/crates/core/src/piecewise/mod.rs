//! Univariate piecewise-quadratic functions.
//!
//! Used for the per-asset tax liability `L_i`, the separable cost `f_i`, its
//! convex envelope, and the approximate liability.

mod envelope;
mod separable;

pub use envelope::{ConvexEnvelope, EnvelopeDecomposition, approximate_tax, convex_envelope, envelope_decompose};
pub use separable::{AssetCostInputs, BuildError, SellSegment, SeparableCost, build_separable_cost};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Breakpoints closer than this are merged.
pub const BREAKPOINT_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PieceError {
    #[error("x = {x} is outside the domain [{lo}, {hi}]")]
    OutOfDomain { x: f64, lo: f64, hi: f64 },
    #[error("pieces do not tile the domain: gap or overlap at {0}")]
    Tiling(f64),
    #[error("discontinuity of {jump:e} at breakpoint {at}")]
    Discontinuous { at: f64, jump: f64 },
    #[error("piece on [{lo}, {hi}] has negative curvature {a}")]
    NegativeCurvature { lo: f64, hi: f64, a: f64 },
    #[error("empty function")]
    Empty,
    #[error("unsupported shape: {0}")]
    UnsupportedShape(String),
    #[error("invalid construction: {0}")]
    Construction(String),
}

/// `a x^2 + b x + c` on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadPiece {
    pub lo: f64,
    pub hi: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl QuadPiece {
    pub fn new(lo: f64, hi: f64, a: f64, b: f64, c: f64) -> Self {
        Self { lo, hi, a, b, c }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.a * x + self.b) * x + self.c
    }

    #[inline]
    pub fn deriv(&self, x: f64) -> f64 {
        2.0 * self.a * x + self.b
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    /// Minimizes `self(x) - s x` over the piece. Among ties the point
    /// closest to zero is returned. Returns `(argmin, min)`.
    pub(crate) fn min_tilted(&self, s: f64) -> (f64, f64) {
        let b = self.b - s;
        let val = |x: f64| (self.a * x + b) * x + self.c;
        if self.a > 0.0 {
            let x = (-b / (2.0 * self.a)).clamp(self.lo, self.hi);
            return (x, val(x));
        }
        if b > 0.0 {
            return (self.lo, val(self.lo));
        }
        if b < 0.0 {
            if self.hi.is_infinite() {
                return (f64::INFINITY, f64::NEG_INFINITY);
            }
            return (self.hi, val(self.hi));
        }
        (0.0_f64.clamp(self.lo, self.hi), self.c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseQuadratic {
    pieces: Vec<QuadPiece>,
}

fn continuity_tol(v: f64) -> f64 {
    BREAKPOINT_TOL * v.abs().max(1.0)
}

impl PiecewiseQuadratic {
    /// Builds from pieces in ascending order. Pieces narrower than
    /// [`BREAKPOINT_TOL`] are dropped (their neighbours absorb the gap).
    pub fn new(pieces: Vec<QuadPiece>) -> Result<Self, PieceError> {
        if pieces.is_empty() {
            return Err(PieceError::Empty);
        }
        if pieces.len() == 1 {
            let p = pieces[0];
            if !(p.lo <= p.hi) || p.lo.is_infinite() {
                return Err(PieceError::Tiling(p.lo));
            }
            if p.a < 0.0 {
                return Err(PieceError::NegativeCurvature { lo: p.lo, hi: p.hi, a: p.a });
            }
            return Ok(Self { pieces });
        }
        let mut kept: Vec<QuadPiece> = Vec::with_capacity(pieces.len());
        let n = pieces.len();
        for (k, p) in pieces.into_iter().enumerate() {
            if p.lo.is_infinite() || p.lo.is_nan() || p.hi.is_nan() {
                return Err(PieceError::Tiling(p.lo));
            }
            if p.a < 0.0 {
                return Err(PieceError::NegativeCurvature { lo: p.lo, hi: p.hi, a: p.a });
            }
            if p.hi < p.lo {
                return Err(PieceError::Tiling(p.lo));
            }
            if p.width() < BREAKPOINT_TOL && !(kept.is_empty() && k == n - 1) {
                // merged into the neighbours
                if let Some(last) = kept.last_mut() {
                    last.hi = p.hi.max(last.hi);
                }
                continue;
            }
            if let Some(last) = kept.last_mut() {
                if (p.lo - last.hi).abs() > BREAKPOINT_TOL * last.hi.abs().max(1.0) {
                    return Err(PieceError::Tiling(p.lo));
                }
                let at = p.lo;
                let jump = p.eval(at) - last.eval(at);
                if jump.abs() > continuity_tol(last.eval(at)) {
                    return Err(PieceError::Discontinuous { at, jump });
                }
                last.hi = p.lo;
            }
            kept.push(p);
        }
        if kept.is_empty() {
            return Err(PieceError::Empty);
        }
        Ok(Self { pieces: kept })
    }

    pub fn constant(lo: f64, hi: f64, value: f64) -> Self {
        Self {
            pieces: vec![QuadPiece::new(lo, hi, 0.0, 0.0, value)],
        }
    }

    pub fn pieces(&self) -> &[QuadPiece] {
        &self.pieces
    }

    pub fn lo(&self) -> f64 {
        self.pieces[0].lo
    }

    pub fn hi(&self) -> f64 {
        self.pieces[self.pieces.len() - 1].hi
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo() && x <= self.hi()
    }

    /// Interior and end breakpoints.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.pieces.iter().map(|p| p.lo).collect();
        v.push(self.hi());
        v
    }

    fn piece_index(&self, x: f64) -> Result<usize, PieceError> {
        if !self.contains(x) {
            return Err(PieceError::OutOfDomain {
                x,
                lo: self.lo(),
                hi: self.hi(),
            });
        }
        let k = self.pieces.partition_point(|p| p.hi < x);
        Ok(k.min(self.pieces.len() - 1))
    }

    pub fn eval(&self, x: f64) -> Result<f64, PieceError> {
        Ok(self.pieces[self.piece_index(x)?].eval(x))
    }

    /// Derivative from the left (or right at the lower end of the domain).
    pub fn left_derivative(&self, x: f64) -> Result<f64, PieceError> {
        let k = self.piece_index(x)?;
        Ok(self.pieces[k].deriv(x))
    }

    pub fn right_derivative(&self, x: f64) -> Result<f64, PieceError> {
        let mut k = self.piece_index(x)?;
        while k + 1 < self.pieces.len() && self.pieces[k].hi <= x {
            k += 1;
        }
        Ok(self.pieces[k].deriv(x))
    }

    /// Restriction to `[lo, hi]` (intersected with the domain).
    pub fn restrict(&self, lo: f64, hi: f64) -> Result<Self, PieceError> {
        let lo = lo.max(self.lo());
        let hi = hi.min(self.hi());
        if lo > hi {
            return Err(PieceError::Construction(format!("empty restriction [{lo}, {hi}]")));
        }
        let mut out: Vec<QuadPiece> = self
            .pieces
            .iter()
            .filter(|p| p.hi >= lo && p.lo <= hi)
            .map(|p| QuadPiece { lo: p.lo.max(lo), hi: p.hi.min(hi), ..*p })
            .collect();
        if out.len() > 1 {
            out.retain(|p| p.width() > 0.0);
        }
        if out.is_empty() {
            let k = self.piece_index(lo)?;
            out.push(QuadPiece { lo, hi, ..self.pieces[k] });
        }
        Ok(Self { pieces: out })
    }

    /// Inserts a breakpoint at `x` if it lies strictly inside a piece.
    pub fn split_at(&self, x: f64) -> Self {
        let mut out = Vec::with_capacity(self.pieces.len() + 1);
        for p in &self.pieces {
            if p.lo + BREAKPOINT_TOL < x && x < p.hi - BREAKPOINT_TOL {
                out.push(QuadPiece { hi: x, ..*p });
                out.push(QuadPiece { lo: x, ..*p });
            } else {
                out.push(*p);
            }
        }
        Self { pieces: out }
    }

    /// `sum_k w_k g_k` on the intersection of the domains, over the common
    /// refinement of the breakpoints. Negative weights can produce pieces
    /// with negative curvature; no convexity is implied.
    pub fn linear_combination(terms: &[(f64, &PiecewiseQuadratic)]) -> Result<Self, PieceError> {
        if terms.is_empty() {
            return Err(PieceError::Empty);
        }
        let lo = terms.iter().map(|(_, g)| g.lo()).fold(f64::NEG_INFINITY, f64::max);
        let hi = terms.iter().map(|(_, g)| g.hi()).fold(f64::INFINITY, f64::min);
        if lo > hi {
            return Err(PieceError::Construction("domains do not intersect".into()));
        }
        let mut cuts: Vec<f64> = terms
            .iter()
            .flat_map(|(_, g)| g.breakpoints())
            .filter(|&x| x > lo && x < hi)
            .collect();
        cuts.push(lo);
        cuts.push(hi);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|a, b| (*a - *b).abs() < BREAKPOINT_TOL);
        if cuts.len() == 1 {
            cuts.push(cuts[0]);
        }
        let mut pieces = Vec::with_capacity(cuts.len());
        for w in cuts.windows(2) {
            let (l, h) = (w[0], w[1]);
            let probe = if h.is_infinite() { l + 1.0 } else { 0.5 * (l + h) };
            let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
            for (wt, g) in terms {
                let p = g.pieces[g.piece_index(probe.clamp(g.lo(), g.hi()))?];
                a += wt * p.a;
                b += wt * p.b;
                c += wt * p.c;
            }
            pieces.push(QuadPiece::new(l, h, a, b, c));
        }
        let last = pieces.len() - 1;
        pieces[last].hi = hi;
        Ok(Self { pieces })
    }

    /// Convexity on `[lo, hi]`: nonnegative curvature and nondecreasing
    /// derivative across interior breakpoints.
    pub fn is_convex_on(&self, lo: f64, hi: f64) -> bool {
        let mut prev_slope: Option<f64> = None;
        for p in &self.pieces {
            if p.hi <= lo || p.lo >= hi {
                continue;
            }
            if p.a < 0.0 {
                return false;
            }
            let start = p.lo.max(lo);
            let s_in = p.deriv(start);
            if let Some(s) = prev_slope {
                if s_in < s - 1e-9 * s.abs().max(1.0) {
                    return false;
                }
            }
            let end = p.hi.min(hi);
            prev_slope = Some(if end.is_finite() { p.deriv(end) } else { f64::INFINITY });
        }
        true
    }

    pub fn is_convex(&self) -> bool {
        self.is_convex_on(self.lo(), self.hi())
    }

    /// Convex on each of `[lo, 0]` and `[0, hi]`.
    pub fn is_half_line_convex(&self) -> bool {
        self.is_convex_on(self.lo(), 0.0_f64.max(self.lo())) && self.is_convex_on(0.0_f64.min(self.hi()), self.hi())
    }

    /// `n` evenly spaced sample points over the domain (upper end clipped to `cap`).
    pub fn grid(&self, n: usize, cap: f64) -> Vec<f64> {
        let lo = self.lo();
        let hi = self.hi().min(cap);
        if n <= 1 {
            return vec![lo];
        }
        (0..n)
            .map(|k| if k + 1 == n { hi } else { (lo + (hi - lo) * k as f64 / (n - 1) as f64).min(hi) })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_examples() {
        let zero = PiecewiseQuadratic::constant(-1.0, 1.0, 0.0);
        assert_eq!(zero.eval(0.5).unwrap(), 0.0);
        let sq = PiecewiseQuadratic::new(vec![QuadPiece::new(-2.0, 2.0, 1.0, 0.0, 0.0)]).unwrap();
        assert_eq!(sq.eval(-1.5).unwrap(), 2.25);
        assert!(matches!(sq.eval(2.5), Err(PieceError::OutOfDomain { .. })));
    }

    #[test]
    fn construction_checks() {
        let gap = PiecewiseQuadratic::new(vec![QuadPiece::new(0.0, 1.0, 0.0, 0.0, 0.0), QuadPiece::new(1.5, 2.0, 0.0, 0.0, 0.0)]);
        assert!(matches!(gap, Err(PieceError::Tiling(_))));
        let jump = PiecewiseQuadratic::new(vec![QuadPiece::new(0.0, 1.0, 0.0, 0.0, 0.0), QuadPiece::new(1.0, 2.0, 0.0, 0.0, 1.0)]);
        assert!(matches!(jump, Err(PieceError::Discontinuous { .. })));
        let concave = PiecewiseQuadratic::new(vec![QuadPiece::new(0.0, 1.0, -1.0, 0.0, 0.0)]);
        assert!(matches!(concave, Err(PieceError::NegativeCurvature { .. })));
    }

    #[test]
    fn tiny_pieces_merge() {
        let f = PiecewiseQuadratic::new(vec![
            QuadPiece::new(0.0, 1.0, 0.0, 1.0, 0.0),
            QuadPiece::new(1.0, 1.0 + 1e-12, 0.0, 1.0, 0.0),
            QuadPiece::new(1.0 + 1e-12, 2.0, 0.0, 1.0, 0.0),
        ])
        .unwrap();
        assert_eq!(f.pieces().len(), 2);
        assert_eq!(f.eval(1.5).unwrap(), 1.5);
    }

    #[test]
    fn combination_and_restriction() {
        let f = PiecewiseQuadratic::new(vec![QuadPiece::new(-2.0, 0.0, 1.0, 1.0, 0.0), QuadPiece::new(0.0, 2.0, 1.0, 0.0, 0.0)]).unwrap();
        let g = PiecewiseQuadratic::new(vec![QuadPiece::new(-1.0, 1.0, 0.0, 2.0, 1.0), QuadPiece::new(1.0, f64::INFINITY, 0.0, 0.0, 3.0)]).unwrap();
        let h = PiecewiseQuadratic::linear_combination(&[(1.0, &f), (-0.5, &g)]).unwrap();
        assert_eq!(h.lo(), -1.0);
        assert_eq!(h.hi(), 2.0);
        for x in [-1.0, -0.3, 0.0, 0.7, 1.0, 1.9] {
            let want = f.eval(x).unwrap() - 0.5 * g.eval(x).unwrap();
            assert!((h.eval(x).unwrap() - want).abs() < 1e-12);
        }
        let r = f.restrict(-1.0, 0.5).unwrap();
        assert_eq!((r.lo(), r.hi()), (-1.0, 0.5));
        assert!(r.is_half_line_convex());
        assert!(!f.is_convex());
    }

    #[test]
    fn derivatives_at_kink() {
        let f = PiecewiseQuadratic::new(vec![QuadPiece::new(-2.0, 0.0, 1.0, 1.0, 0.0), QuadPiece::new(0.0, 2.0, 1.0, 0.0, 0.0)]).unwrap();
        assert_eq!(f.left_derivative(0.0).unwrap(), 1.0);
        assert_eq!(f.right_derivative(0.0).unwrap(), 0.0);
    }
}
