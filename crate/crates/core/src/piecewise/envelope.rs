//! Convex envelope of a function that is convex on each half-line.
//!
//! The envelope agrees with `f` except on a bridge `[w*, v*]` around zero,
//! where it is the common tangent of the sell branch (`x <= 0`) and the buy
//! branch (`x >= 0`). The tangent slope is found by bisection: for a slope
//! `s`, let `c_sell(s)` and `c_buy(s)` be the intercepts of the supporting
//! lines of each branch. `c_sell - c_buy` is nondecreasing in `s` and
//! vanishes at the common tangent.

use serde::{Deserialize, Serialize};

use super::{PieceError, PiecewiseQuadratic, QuadPiece};

const MAX_BISECTIONS: usize = 300;

/// The bridge segment of an envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bridge {
    pub sell_point: f64,
    pub buy_point: f64,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexEnvelope {
    function: PiecewiseQuadratic,
    bridge: Option<Bridge>,
}

/// `x = theta * buy_point + (1 - theta) * sell_point`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeDecomposition {
    pub theta: f64,
    pub buy_point: f64,
    pub sell_point: f64,
}

impl ConvexEnvelope {
    pub fn function(&self) -> &PiecewiseQuadratic {
        &self.function
    }

    pub fn into_function(self) -> PiecewiseQuadratic {
        self.function
    }

    /// `None` when `f` is already convex.
    pub fn bridge(&self) -> Option<Bridge> {
        self.bridge
    }

    pub fn eval(&self, x: f64) -> Result<f64, PieceError> {
        self.function.eval(x)
    }

    pub fn decompose(&self, x: f64) -> Result<EnvelopeDecomposition, PieceError> {
        if !self.function.contains(x) {
            return Err(PieceError::OutOfDomain {
                x,
                lo: self.function.lo(),
                hi: self.function.hi(),
            });
        }
        if let Some(b) = self.bridge {
            if b.sell_point <= x && x <= b.buy_point {
                return Ok(EnvelopeDecomposition {
                    theta: (x - b.sell_point) / (b.buy_point - b.sell_point),
                    buy_point: b.buy_point,
                    sell_point: b.sell_point,
                });
            }
        }
        Ok(if x >= 0.0 {
            EnvelopeDecomposition {
                theta: 1.0,
                buy_point: x,
                sell_point: 0.0,
            }
        } else {
            EnvelopeDecomposition {
                theta: 0.0,
                buy_point: 0.0,
                sell_point: x,
            }
        })
    }
}

/// Minimizes `f(x) - s x` over a set of pieces; ties go to the point closest to zero.
fn support(pieces: &[QuadPiece], s: f64) -> (f64, f64) {
    let mut best = (f64::NAN, f64::INFINITY);
    for p in pieces {
        let (x, v) = p.min_tilted(s);
        let tie = (v - best.1).abs() <= 1e-15 * v.abs().max(1.0);
        if v < best.1 && !tie || tie && x.abs() < best.0.abs() || best.0.is_nan() {
            best = (x, v);
        }
    }
    best
}

/// Greatest convex underestimator of a half-line-convex `f`.
pub fn convex_envelope(f: &PiecewiseQuadratic) -> Result<ConvexEnvelope, PieceError> {
    if !f.is_half_line_convex() {
        return Err(PieceError::UnsupportedShape("function is not convex on each half-line".into()));
    }
    let convex = || ConvexEnvelope {
        function: f.clone(),
        bridge: None,
    };
    if f.lo() >= 0.0 || f.hi() <= 0.0 {
        return Ok(convex());
    }
    let f = f.split_at(0.0);
    let s_hi = f.left_derivative(0.0)?;
    let s_lo = f.right_derivative(0.0)?;
    if s_hi <= s_lo + 1e-12 * s_lo.abs().max(1.0) {
        return Ok(convex());
    }
    let (sell, buy): (Vec<QuadPiece>, Vec<QuadPiece>) = f.pieces().iter().partition(|p| p.hi <= 0.0);
    let gap = |s: f64| support(&sell, s).1 - support(&buy, s).1;

    let (mut lo, mut hi) = (s_lo, s_hi);
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if gap(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let slope = 0.5 * (lo + hi);
    let w = support(&sell, slope).0;
    let v = support(&buy, slope).0;
    if !v.is_finite() || !w.is_finite() {
        return Err(PieceError::UnsupportedShape("bridge does not close on a bounded domain".into()));
    }
    if v - w <= 0.0 {
        return Ok(convex());
    }
    let (fw, fv) = (f.eval(w)?, f.eval(v)?);
    let line_slope = (fv - fw) / (v - w);
    let line = QuadPiece::new(w, v, 0.0, line_slope, fw - line_slope * w);

    let mut pieces: Vec<QuadPiece> = Vec::with_capacity(f.pieces().len() + 1);
    pieces.extend(f.pieces().iter().filter(|p| p.lo < w).map(|p| QuadPiece { hi: p.hi.min(w), ..*p }));
    pieces.push(line);
    pieces.extend(f.pieces().iter().filter(|p| p.hi > v).map(|p| QuadPiece { lo: p.lo.max(v), ..*p }));
    Ok(ConvexEnvelope {
        function: PiecewiseQuadratic::new(pieces)?,
        bridge: Some(Bridge {
            sell_point: w,
            buy_point: v,
            slope: line_slope,
        }),
    })
}

/// Decomposition of `x` into a buy point and a sell point realizing `f**(x)`.
pub fn envelope_decompose(
    f: &PiecewiseQuadratic,
    env: &ConvexEnvelope,
    x: f64,
) -> Result<EnvelopeDecomposition, PieceError> {
    if !f.contains(x) {
        return Err(PieceError::OutOfDomain { x, lo: f.lo(), hi: f.hi() });
    }
    env.decompose(x)
}

/// `L_hat = L + (f** - f) / gamma_tax`: equal to `L` off the bridge and
/// below it on the bridge.
pub fn approximate_tax(
    liability: &PiecewiseQuadratic,
    f: &PiecewiseQuadratic,
    env: &ConvexEnvelope,
    gamma_tax: f64,
) -> Result<PiecewiseQuadratic, PieceError> {
    if !(gamma_tax > 0.0) {
        return Err(PieceError::Construction(format!("gamma_tax must be positive, got {gamma_tax}")));
    }
    let inv = 1.0 / gamma_tax;
    PiecewiseQuadratic::linear_combination(&[(1.0, liability), (inv, env.function()), (-inv, f)])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bridge_example() -> PiecewiseQuadratic {
        PiecewiseQuadratic::new(vec![QuadPiece::new(-2.0, 0.0, 1.0, 1.0, 0.0), QuadPiece::new(0.0, 2.0, 1.0, 0.0, 0.0)]).unwrap()
    }

    #[test]
    fn hand_derived_bridge() {
        let f = bridge_example();
        let env = convex_envelope(&f).unwrap();
        let b = env.bridge().unwrap();
        assert!((b.sell_point + 0.25).abs() < 1e-12);
        assert!((b.buy_point - 0.25).abs() < 1e-12);
        assert!((b.slope - 0.5).abs() < 1e-12);
        assert!((env.eval(0.0).unwrap() + 0.0625).abs() < 1e-12);
        assert!((env.eval(0.1).unwrap() - (0.05 - 0.0625)).abs() < 1e-12);
        assert_eq!(env.eval(1.0).unwrap(), 1.0);
        assert_eq!(env.eval(-1.0).unwrap(), 0.0);
    }

    #[test]
    fn decomposition_examples() {
        let f = bridge_example();
        let env = convex_envelope(&f).unwrap();
        let d0 = envelope_decompose(&f, &env, 0.0).unwrap();
        assert!((d0.theta - 0.5).abs() < 1e-12);
        assert!((d0.buy_point - 0.25).abs() < 1e-12);
        assert!((d0.sell_point + 0.25).abs() < 1e-12);
        let d1 = envelope_decompose(&f, &env, 1.0).unwrap();
        assert_eq!((d1.theta, d1.buy_point), (1.0, 1.0));
        let d2 = envelope_decompose(&f, &env, -2.0).unwrap();
        assert_eq!((d2.theta, d2.sell_point), (0.0, -2.0));
        assert!(envelope_decompose(&f, &env, 3.0).is_err());
    }

    #[test]
    fn convex_input_is_fixed_point() {
        let f = PiecewiseQuadratic::new(vec![QuadPiece::new(-1.0, 0.0, 1.0, -1.0, 0.0), QuadPiece::new(0.0, 1.0, 0.5, 0.0, 0.0)]).unwrap();
        let env = convex_envelope(&f).unwrap();
        assert!(env.bridge().is_none());
        assert_eq!(env.function(), &f);
        let again = convex_envelope(env.function()).unwrap();
        assert!(again.bridge().is_none());
    }

    #[test]
    fn idempotent_on_envelopes() {
        let env = convex_envelope(&bridge_example()).unwrap();
        let twice = convex_envelope(env.function()).unwrap();
        assert!(twice.bridge().is_none());
        for k in 0..=40 {
            let x = -2.0 + 0.1 * k as f64;
            assert!((twice.eval(x).unwrap() - env.eval(x).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_nonconvex_branch() {
        let f = PiecewiseQuadratic::new(vec![
            QuadPiece::new(-2.0, -1.0, 0.0, 1.0, 1.0),
            QuadPiece::new(-1.0, 0.0, 0.0, -1.0, -1.0),
            QuadPiece::new(0.0, 1.0, 0.0, 0.0, -1.0),
        ])
        .unwrap();
        assert!(matches!(convex_envelope(&f), Err(PieceError::UnsupportedShape(_))));
    }

    #[test]
    fn approximate_tax_drops_on_bridge() {
        let f = bridge_example();
        let env = convex_envelope(&f).unwrap();
        let l = PiecewiseQuadratic::constant(-2.0, 2.0, 0.0);
        let lhat = approximate_tax(&l, &f, &env, 2.0).unwrap();
        assert!((lhat.eval(0.0).unwrap() - (-0.0625 / 2.0)).abs() < 1e-12);
        assert_eq!(lhat.eval(1.0).unwrap(), 0.0);
        assert_eq!(lhat.eval(-0.5).unwrap(), 0.0);
        assert!(approximate_tax(&l, &f, &env, 0.0).is_err());
    }
}
