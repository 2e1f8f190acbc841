//! Solver backend contract.
//!
//! A [`ConicProgram`] is `minimize x'Px/2 + q'x + k` subject to linear
//! equalities, linear inequalities and second-order cone memberships. Any
//! [`ConicSolver`] may solve it; the bundled backend is Clarabel.

use std::fmt::Write as _;
use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Environment variable selecting the backend.
pub const SOLVER_ENV: &str = "TAXOPT_SOLVER";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("unknown solver backend {0:?} (available: clarabel)")]
    UnknownBackend(String),
    #[error("backend setup failed: {0}")]
    Setup(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub usize);

/// Sparse affine expression `sum_k coef_k x_k + constant`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Affine {
    pub terms: Vec<(Var, f64)>,
    pub constant: f64,
}

impl Affine {
    pub fn var(v: Var) -> Self {
        Self::term(v, 1.0)
    }

    pub fn term(v: Var, coef: f64) -> Self {
        Self {
            terms: vec![(v, coef)],
            constant: 0.0,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn plus(mut self, v: Var, coef: f64) -> Self {
        self.terms.push((v, coef));
        self
    }

    pub fn plus_const(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn scaled(mut self, s: f64) -> Self {
        for t in &mut self.terms {
            t.1 *= s;
        }
        self.constant *= s;
        self
    }

    pub fn add(mut self, other: &Affine) -> Self {
        self.terms.extend_from_slice(&other.terms);
        self.constant += other.constant;
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|(v, c)| c * x[v.0]).sum::<f64>() + self.constant
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConicProgram {
    names: Vec<String>,
    /// `(i, j, coef)` meaning `coef * x_i * x_j` in the objective.
    quad: Vec<(usize, usize, f64)>,
    linear: Vec<f64>,
    offset: f64,
    /// `expr == 0`
    equalities: Vec<Affine>,
    /// `expr <= 0`
    inequalities: Vec<Affine>,
    /// `(t, z...)` with `||z|| <= t`
    cones: Vec<Vec<Affine>>,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>) -> Var {
        self.names.push(name.into());
        self.linear.push(0.0);
        Var(self.names.len() - 1)
    }

    pub fn num_vars(&self) -> usize {
        self.names.len()
    }

    pub fn num_equalities(&self) -> usize {
        self.equalities.len()
    }

    pub fn num_inequalities(&self) -> usize {
        self.inequalities.len()
    }

    pub fn num_cones(&self) -> usize {
        self.cones.len()
    }

    pub fn var_name(&self, v: Var) -> &str {
        &self.names[v.0]
    }

    /// Adds `coef * x_i * x_j` to the objective.
    pub fn add_quadratic(&mut self, i: Var, j: Var, coef: f64) {
        if coef != 0.0 {
            self.quad.push((i.0, j.0, coef));
        }
    }

    pub fn add_linear(&mut self, v: Var, coef: f64) {
        self.linear[v.0] += coef;
    }

    pub fn add_objective_constant(&mut self, c: f64) {
        self.offset += c;
    }

    pub fn add_eq(&mut self, lhs: Affine, rhs: f64) {
        self.equalities.push(lhs.plus_const(-rhs));
    }

    pub fn add_le(&mut self, lhs: Affine, rhs: f64) {
        self.inequalities.push(lhs.plus_const(-rhs));
    }

    pub fn add_ge(&mut self, lhs: Affine, rhs: f64) {
        self.inequalities.push(lhs.scaled(-1.0).plus_const(rhs));
    }

    /// `lo <= expr <= hi`, either side may be infinite.
    pub fn add_range(&mut self, expr: Affine, lo: f64, hi: f64) {
        if lo == hi {
            self.add_eq(expr, lo);
            return;
        }
        if lo.is_finite() {
            self.add_ge(expr.clone(), lo);
        }
        if hi.is_finite() {
            self.add_le(expr, hi);
        }
    }

    /// `||rest|| <= head`.
    pub fn add_soc(&mut self, head: Affine, rest: Vec<Affine>) {
        let mut c = Vec::with_capacity(rest.len() + 1);
        c.push(head);
        c.extend(rest);
        self.cones.push(c);
    }

    /// `2 x y >= ||z||^2` with `x, y >= 0`, as `||(x - y, sqrt2 z)|| <= x + y`.
    pub fn add_rotated_soc(&mut self, x: Affine, y: Affine, z: Vec<Affine>) {
        let head = x.clone().add(&y);
        let diff = x.add(&y.scaled(-1.0));
        let mut rest = vec![diff];
        rest.extend(z.into_iter().map(|e| e.scaled(std::f64::consts::SQRT_2)));
        self.add_soc(head, rest);
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let q: f64 = self.quad.iter().map(|&(i, j, c)| c * x[i] * x[j]).sum();
        let l: f64 = self.linear.iter().zip(x).map(|(c, v)| c * v).sum();
        q + l + self.offset
    }

    /// Largest violation over all constraints at `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let eq = self.equalities.iter().map(|e| e.eval(x).abs());
        let le = self.inequalities.iter().map(|e| e.eval(x).max(0.0));
        let soc = self.cones.iter().map(|c| {
            let t = c[0].eval(x);
            let n = c[1..].iter().map(|e| e.eval(x).powi(2)).sum::<f64>().sqrt();
            (n - t).max(0.0)
        });
        eq.chain(le).chain(soc).fold(0.0, f64::max)
    }

    /// Plain-text dump: one line per objective term, constraint row and cone.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let fmt_aff = |a: &Affine| {
            let mut out = String::new();
            for (v, c) in &a.terms {
                let _ = write!(out, "{c:+e}*x{} ", v.0);
            }
            let _ = write!(out, "{:+e}", a.constant);
            out
        };
        let _ = writeln!(s, "# conic program v1");
        let _ = writeln!(s, "vars {}", self.num_vars());
        for (k, n) in self.names.iter().enumerate() {
            let _ = writeln!(s, "var x{k} {n}");
        }
        let _ = writeln!(s, "objective constant {:e}", self.offset);
        for (k, c) in self.linear.iter().enumerate().filter(|(_, c)| **c != 0.0) {
            let _ = writeln!(s, "objective linear x{k} {c:e}");
        }
        for (i, j, c) in &self.quad {
            let _ = writeln!(s, "objective quad x{i} x{j} {c:e}");
        }
        for e in &self.equalities {
            let _ = writeln!(s, "eq {} == 0", fmt_aff(e));
        }
        for e in &self.inequalities {
            let _ = writeln!(s, "le {} <= 0", fmt_aff(e));
        }
        for c in &self.cones {
            let _ = writeln!(s, "soc {}", c.len());
            for e in c {
                let _ = writeln!(s, "  {}", fmt_aff(e));
            }
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConicSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    /// Primal objective including the constant offset.
    pub objective: f64,
    pub iterations: u32,
    pub seconds: f64,
    pub detail: String,
}

pub trait ConicSolver: Send + Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, program: &ConicProgram) -> Result<ConicSolution, SolverError>;
}

/// Interior-point backend.
#[derive(Debug, Clone)]
pub struct ClarabelBackend {
    pub tol: f64,
    pub max_iter: u32,
}

impl Default for ClarabelBackend {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 200 }
    }
}

impl ConicSolver for ClarabelBackend {
    fn name(&self) -> &'static str {
        "clarabel"
    }

    fn solve(&self, program: &ConicProgram) -> Result<ConicSolution, SolverError> {
        let start = Instant::now();
        let n = program.num_vars();
        let (mut pi, mut pj, mut pv) = (Vec::new(), Vec::new(), Vec::new());
        for &(i, j, c) in &program.quad {
            if i == j {
                pi.push(i);
                pj.push(j);
                pv.push(2.0 * c);
            } else {
                pi.push(i.min(j));
                pj.push(i.max(j));
                pv.push(c);
            }
        }
        let p = CscMatrix::new_from_triplets(n, n, pi, pj, pv);

        let (mut ai, mut aj, mut av) = (Vec::new(), Vec::new(), Vec::new());
        let mut b = Vec::new();
        let mut cones = Vec::new();
        let mut row = 0usize;
        // Rows are `s = b - A x` with `s` in the cone.
        let mut push_row = |expr: &Affine, sign: f64, b: &mut Vec<f64>, row: &mut usize| {
            for (v, c) in &expr.terms {
                ai.push(*row);
                aj.push(v.0);
                av.push(-sign * c);
            }
            b.push(sign * expr.constant);
            *row += 1;
        };
        // expr == 0  ->  0 = -constant - terms.x
        for e in &program.equalities {
            push_row(e, -1.0, &mut b, &mut row);
        }
        if !program.equalities.is_empty() {
            cones.push(SupportedConeT::ZeroConeT(program.equalities.len()));
        }
        // expr <= 0  ->  s = -expr >= 0
        for e in &program.inequalities {
            push_row(e, -1.0, &mut b, &mut row);
        }
        if !program.inequalities.is_empty() {
            cones.push(SupportedConeT::NonnegativeConeT(program.inequalities.len()));
        }
        // cone component s_k = expr_k
        for c in &program.cones {
            for e in c {
                push_row(e, 1.0, &mut b, &mut row);
            }
            cones.push(SupportedConeT::SecondOrderConeT(c.len()));
        }
        let a = CscMatrix::new_from_triplets(row, n, ai, aj, av);

        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .max_iter(self.max_iter)
            .tol_gap_abs(self.tol)
            .tol_gap_rel(self.tol)
            .tol_feas(self.tol)
            .tol_ktratio(1e-8)
            .build()
            .map_err(|e| SolverError::Setup(e.to_string()))?;
        let mut solver = DefaultSolver::new(&p, &program.linear, &a, &b, &cones, settings)
            .map_err(|e| SolverError::Setup(e.to_string()))?;
        solver.solve();
        let sol = &solver.solution;
        let status = match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
            _ => SolveStatus::NumericalFailure,
        };
        Ok(ConicSolution {
            status,
            objective: program.objective(&sol.x),
            x: sol.x.clone(),
            iterations: sol.iterations,
            seconds: start.elapsed().as_secs_f64(),
            detail: format!("{:?}", sol.status),
        })
    }
}

/// Backend named by `TAXOPT_SOLVER` (default: clarabel).
pub fn solver_from_env() -> Result<Box<dyn ConicSolver>, SolverError> {
    match std::env::var(SOLVER_ENV) {
        Ok(name) => solver_by_name(&name),
        Err(_) => Ok(Box::new(ClarabelBackend::default())),
    }
}

pub fn solver_by_name(name: &str) -> Result<Box<dyn ConicSolver>, SolverError> {
    match name.trim().to_ascii_lowercase().as_str() {
        "" | "clarabel" => Ok(Box::new(ClarabelBackend::default())),
        other => Err(SolverError::UnknownBackend(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_qp() {
        // min (x-1)^2 + (y-2)^2  s.t. x + y = 1, x >= 0.5
        let mut p = ConicProgram::new();
        let x = p.add_var("x");
        let y = p.add_var("y");
        p.add_quadratic(x, x, 1.0);
        p.add_quadratic(y, y, 1.0);
        p.add_linear(x, -2.0);
        p.add_linear(y, -4.0);
        p.add_objective_constant(5.0);
        p.add_eq(Affine::var(x).plus(y, 1.0), 1.0);
        p.add_ge(Affine::var(x), 0.5);
        let sol = ClarabelBackend::default().solve(&p).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.x[0] - 0.5).abs() < 1e-7, "{sol:?}");
        assert!((sol.x[1] - 0.5).abs() < 1e-7);
        assert!((sol.objective - 2.5).abs() < 1e-7);
    }

    #[test]
    fn rotated_cone_epigraph() {
        // min t s.t. t * 1 >= x^2, x = 3  ->  t = 9
        let mut p = ConicProgram::new();
        let t = p.add_var("t");
        let x = p.add_var("x");
        p.add_linear(t, 1.0);
        p.add_eq(Affine::var(x), 3.0);
        p.add_rotated_soc(Affine::var(t), Affine::constant(0.5), vec![Affine::var(x)]);
        let sol = ClarabelBackend::default().solve(&p).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective - 9.0).abs() < 1e-6);
        assert!(p.max_violation(&sol.x) < 1e-7);
    }

    #[test]
    fn infeasible_detected() {
        let mut p = ConicProgram::new();
        let x = p.add_var("x");
        p.add_linear(x, 1.0);
        p.add_ge(Affine::var(x), 1.0);
        p.add_le(Affine::var(x), 0.0);
        let sol = ClarabelBackend::default().solve(&p).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn backend_selection() {
        assert_eq!(solver_by_name("Clarabel").unwrap().name(), "clarabel");
        assert!(matches!(solver_by_name("cplex"), Err(SolverError::UnknownBackend(_))));
    }

    #[test]
    fn dump_lists_rows() {
        let mut p = ConicProgram::new();
        let x = p.add_var("x");
        p.add_linear(x, 1.0);
        p.add_range(Affine::var(x), 0.0, 1.0);
        let text = p.dump();
        assert!(text.contains("vars 1"));
        assert_eq!(text.lines().filter(|l| l.starts_with("le ")).count(), 2);
    }
}
