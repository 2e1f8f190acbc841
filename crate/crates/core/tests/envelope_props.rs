mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{arb_position, asof, random_half_line_convex};
use taxopt::ledger::{TaxParameters, liability_pwl_capped};
use taxopt::oracle::envelope_bruteforce;
use taxopt::piecewise::{PiecewiseQuadratic, approximate_tax, convex_envelope, envelope_decompose};

const TOL: f64 = 1e-9;

fn arb_function() -> impl Strategy<Value = PiecewiseQuadratic> {
    any::<u64>().prop_map(|seed| random_half_line_convex(&mut ChaCha8Rng::seed_from_u64(seed)))
}

fn scale(f: &PiecewiseQuadratic) -> f64 {
    1.0 + f.pieces().iter().map(|p| p.eval(p.lo).abs().max(p.eval(p.hi).abs())).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn envelope_underestimates_and_is_convex(f in arb_function()) {
        let env = convex_envelope(&f).unwrap();
        let tol = TOL * scale(&f);
        let xs = f.grid(2001, f64::INFINITY);
        let vals: Vec<f64> = xs.iter().map(|&x| env.eval(x).unwrap()).collect();
        for (&x, &e) in xs.iter().zip(&vals) {
            prop_assert!(e <= f.eval(x).unwrap() + tol, "x {x}: env {e} f {}", f.eval(x).unwrap());
        }
        for k in 1..xs.len() - 1 {
            prop_assert!(vals[k] <= 0.5 * (vals[k - 1] + vals[k + 1]) + tol);
        }
        prop_assert!(env.function().is_convex());
    }

    #[test]
    fn envelope_touches_f_at_the_bridge_ends(f in arb_function()) {
        let env = convex_envelope(&f).unwrap();
        let tol = TOL * scale(&f);
        match env.bridge() {
            Some(b) => {
                prop_assert!(b.sell_point <= 0.0 && b.buy_point >= 0.0);
                prop_assert!((env.eval(b.sell_point).unwrap() - f.eval(b.sell_point).unwrap()).abs() <= tol);
                prop_assert!((env.eval(b.buy_point).unwrap() - f.eval(b.buy_point).unwrap()).abs() <= tol);
                let chord = (f.eval(b.buy_point).unwrap() - f.eval(b.sell_point).unwrap()) / (b.buy_point - b.sell_point).max(1e-300);
                if b.buy_point > b.sell_point {
                    prop_assert!((chord - b.slope).abs() <= 1e-6 * (1.0 + b.slope.abs()));
                }
            }
            None => prop_assert!(f.is_convex()),
        }
    }

    #[test]
    fn envelope_is_idempotent(f in arb_function()) {
        let env = convex_envelope(&f).unwrap();
        let again = convex_envelope(env.function()).unwrap();
        let tol = TOL * scale(&f);
        for x in f.grid(1001, f64::INFINITY) {
            prop_assert!((again.eval(x).unwrap() - env.eval(x).unwrap()).abs() <= tol);
        }
    }

    #[test]
    fn decomposition_recomposes(f in arb_function(), t in 0.0..=1.0f64) {
        let env = convex_envelope(&f).unwrap();
        let x = f.lo() + t * (f.hi() - f.lo());
        let d = envelope_decompose(&f, &env, x).unwrap();
        prop_assert!((0.0..=1.0).contains(&d.theta));
        prop_assert!(d.buy_point >= 0.0 && d.sell_point <= 0.0);
        let mix = d.theta * d.buy_point + (1.0 - d.theta) * d.sell_point;
        prop_assert!((mix - x).abs() <= TOL * (1.0 + x.abs()));
        let value = d.theta * f.eval(d.buy_point).unwrap() + (1.0 - d.theta) * f.eval(d.sell_point).unwrap();
        prop_assert!((value - env.eval(x).unwrap()).abs() <= TOL * scale(&f));
    }

    #[test]
    fn envelope_matches_sampled_hull(f in arb_function()) {
        let env = convex_envelope(&f).unwrap();
        let hull = envelope_bruteforce(&f, 4001).unwrap();
        let h = (f.hi() - f.lo()) / 4000.0;
        // A sampled hull can only sit above the envelope, by at most the
        // interpolation error of the grid.
        let slope = f.pieces().iter().map(|p| p.deriv(p.lo).abs().max(p.deriv(p.hi).abs())).fold(0.0, f64::max);
        for (&x, &y) in hull.xs.iter().zip(&hull.hull) {
            let e = env.eval(x).unwrap();
            prop_assert!(y >= e - TOL * scale(&f));
            prop_assert!(y <= e + slope * h + 1e-6);
        }
    }

    #[test]
    fn approximate_tax_stays_below_liability(pos in arb_position(), gamma_tax in 0.2..3.0f64, quad in 1e-6..1e-3f64) {
        let tax = TaxParameters::default();
        let cap = pos.holding().max(1.0);
        let l = liability_pwl_capped(&pos, asof(), &tax, cap).unwrap();
        let cost = PiecewiseQuadratic::linear_combination(&[(gamma_tax, &l)]).unwrap();
        let f = {
            let mut pieces = cost.pieces().to_vec();
            for p in &mut pieces {
                p.a += quad;
            }
            PiecewiseQuadratic::new(pieces).unwrap()
        };
        let env = convex_envelope(&f).unwrap();
        let l_hat = approximate_tax(&l, &f, &env, gamma_tax).unwrap();
        for x in f.grid(500, f64::INFINITY) {
            let (a, b) = (l_hat.eval(x).unwrap(), l.eval(x).unwrap());
            prop_assert!(a <= b + 1e-9 * (1.0 + b.abs()));
            if env.bridge().is_none_or(|br| x < br.sell_point || x > br.buy_point) {
                prop_assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()));
            }
        }
    }
}
