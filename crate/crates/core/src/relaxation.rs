//! Convex relaxation in which each nonconvex per-asset cost is replaced by
//! its convex envelope, written as a second-order cone program through the
//! perspectives of the buy and sell branches.
//!
//! For an asset with a loss lot the block is
//!
//! ```text
//! minimize   t_buy + t_sell + b_buy v + b_sell w + sum_j cost_j s_j + c
//! subject to a v^2 <= t_buy theta,   a w^2 <= t_sell (1 - theta)
//!            0 <= v <= cap theta,    w <= 0
//!            0 <= s_j <= width_j (1 - theta),   sum_j s_j = -w
//!            x = v + w,              0 <= theta <= 1
//! ```
//!
//! whose value at fixed `x` is `f**(x)`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::conic::{Affine, ConicProgram, ConicSolver, SolveStatus, Var};
use crate::piecewise::{SellSegment, SeparableCost};
use crate::tam::{
    AssetTerms, SignChoice, TamError, TamProblemData, add_convex_asset, base_program, clean_trades, status_error,
};

/// Thetas this close to 0 or 1 are reported as exactly 0 or 1.
pub const THETA_SNAP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxationSolution {
    pub u_relax: Vec<f64>,
    pub thetas: Vec<f64>,
    /// `U*_relax`, an upper bound on the optimal utility.
    pub upper_bound: f64,
    pub status: SolveStatus,
    /// Assets represented by a perspective block.
    pub blocks: Vec<usize>,
    pub seconds: f64,
}

/// Variables of one perspective block.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BlockVars {
    pub theta: Var,
}

pub(crate) fn add_perspective_block(p: &mut ConicProgram, x: Var, t: &AssetTerms, label: usize) -> BlockVars {
    let theta = p.add_var(format!("theta[{label}]"));
    let v = p.add_var(format!("v[{label}]"));
    let w = p.add_var(format!("w[{label}]"));
    p.add_range(Affine::var(theta), 0.0, 1.0);
    p.add_ge(Affine::var(v), 0.0);
    p.add_le(Affine::var(v).plus(theta, -t.cap), 0.0);
    p.add_le(Affine::var(w), 0.0);
    p.add_eq(Affine::var(x).plus(v, -1.0).plus(w, -1.0), 0.0);
    p.add_linear(v, t.b_buy);
    p.add_linear(w, t.b_sell);
    p.add_objective_constant(t.c);

    let mut sold = Affine::var(w);
    for (j, seg) in t.segments.iter().enumerate() {
        let s = p.add_var(format!("s[{label},{j}]"));
        p.add_ge(Affine::var(s), 0.0);
        p.add_le(Affine::var(s).plus(theta, seg.width), seg.width);
        p.add_linear(s, seg.cost);
        sold = sold.plus(s, 1.0);
    }
    p.add_eq(sold, 0.0);

    if t.a > 0.0 {
        let r = (2.0 * t.a).sqrt();
        let tb = p.add_var(format!("t_buy[{label}]"));
        let ts = p.add_var(format!("t_sell[{label}]"));
        p.add_linear(tb, 1.0);
        p.add_linear(ts, 1.0);
        p.add_rotated_soc(Affine::var(tb), Affine::var(theta), vec![Affine::term(v, r)]);
        p.add_rotated_soc(
            Affine::var(ts),
            Affine::constant(1.0).plus(theta, -1.0),
            vec![Affine::term(w, r)],
        );
    }
    BlockVars { theta }
}

/// The relaxed program together with the block layout.
pub struct PerspectiveProgram {
    pub program: ConicProgram,
    pub x: Vec<Var>,
    pub scale: f64,
    pub blocks: Vec<usize>,
    thetas: Vec<Option<Var>>,
}

impl PerspectiveProgram {
    /// `U*_relax` from an optimal objective value.
    pub fn upper_bound(&self, objective: f64) -> f64 {
        -objective * self.scale
    }
}

/// Builds the relaxation. Blocks are created only for assets that hold a
/// loss lot and may be bought; every other cost is already convex.
pub fn build_perspective_program(data: &TamProblemData) -> Result<PerspectiveProgram, TamError> {
    crate::tam::validate(data)?;
    let mut sp = base_program(data)?;
    let mut blocks = Vec::new();
    let mut thetas = vec![None; data.n()];
    for i in 0..data.n() {
        let t = &sp.terms[i];
        if t.has_loss_segment() && t.cap > 0.0 {
            let b = add_perspective_block(&mut sp.program, sp.x[i], t, i);
            thetas[i] = Some(b.theta);
            blocks.push(i);
        } else {
            add_convex_asset(&mut sp.program, sp.x[i], t, SignChoice::Free, i);
        }
    }
    Ok(PerspectiveProgram {
        program: sp.program,
        x: sp.x,
        scale: sp.scale,
        blocks,
        thetas,
    })
}

fn snap_theta(theta: f64) -> f64 {
    let t = theta.clamp(0.0, 1.0);
    if t < THETA_SNAP {
        0.0
    } else if t > 1.0 - THETA_SNAP {
        1.0
    } else {
        t
    }
}

pub fn solve_relaxation(data: &TamProblemData, solver: &dyn ConicSolver) -> Result<RelaxationSolution, TamError> {
    let start = Instant::now();
    let pp = build_perspective_program(data)?;
    let sol = solver.solve(&pp.program)?;
    if sol.status != SolveStatus::Optimal {
        return Err(status_error(sol.status, &sol.detail));
    }
    let u_relax = clean_trades(data, &sol.x, pp.scale, None);
    let thetas = (0..data.n())
        .map(|i| match pp.thetas[i] {
            Some(v) => snap_theta(sol.x[v.0]),
            None if u_relax[i] >= 0.0 => 1.0,
            None => 0.0,
        })
        .collect();
    Ok(RelaxationSolution {
        u_relax,
        thetas,
        upper_bound: pp.upper_bound(sol.objective),
        status: sol.status,
        blocks: pp.blocks,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Minimizes a single perspective block with the trade pinned at `x`; the
/// optimal value is `f**(x)`.
pub fn fixed_point_envelope_check(f: &SeparableCost, x: f64, solver: &dyn ConicSolver) -> Result<f64, TamError> {
    if !(x >= f.lo() - 1e-9 * f.lo().abs().max(1.0) && x <= f.hi() + 1e-9 * f.hi().abs().max(1.0)) {
        return Err(TamError::Validation(vec![format!(
            "{x} is outside the domain [{}, {}]",
            f.lo(),
            f.hi()
        )]));
    }
    let s = f.sell_limit().max(f.hi()).max(x.abs()).max(1.0);
    let terms = AssetTerms {
        a: f.quad * s,
        b_buy: f.buy_slope,
        b_sell: f.sell_slope,
        c: f.constant / s,
        segments: f
            .segments
            .iter()
            .map(|seg| SellSegment {
                width: seg.width / s,
                cost: seg.cost,
            })
            .collect(),
        cap: f.hi() / s,
    };
    let mut p = ConicProgram::new();
    let xv = p.add_var("x");
    p.add_eq(Affine::var(xv), (x / s).clamp(-terms.sell_limit(), terms.cap));
    add_perspective_block(&mut p, xv, &terms, 0);
    let sol = solver.solve(&p)?;
    if sol.status != SolveStatus::Optimal {
        return Err(status_error(sol.status, &sol.detail));
    }
    Ok(sol.objective * s)
}
