//! Convex subproblem solved once an activation pattern is fixed:
//!
//! ```text
//!     minimize    Σ (⟨c, v⟩ + d − t)²
//!     subject to  ⟨a, v⟩ + c ≤ 0          (linear inequalities)
//!                 ‖v_G‖₂ ≤ 1              (disjoint ball groups)
//!                 lo ≤ v_i ≤ hi           (box bounds)
//! ```
//!
//! The problem is handed to Clarabel as a conic QP. Every returned solution
//! carries a lower bound from the dual objective, and a solve only succeeds
//! when `value − lower_bound ≤ β`.

use std::collections::BTreeMap;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

mod refine;

/// Sparse linear form `Σ coeff · v[index]`.
pub type LinearForm = Vec<(usize, f64)>;

/// Converts a dense coefficient vector to a sparse form, dropping zeros.
pub fn sparse(dense: &[f64]) -> LinearForm {
    dense
        .iter()
        .enumerate()
        .filter(|(_, c)| **c != 0.0)
        .map(|(i, c)| (i, *c))
        .collect()
}

fn apply(form: &LinearForm, v: &[f64]) -> f64 {
    form.iter().map(|&(i, c)| c * v[i]).sum()
}

/// One squared residual `(⟨coeffs, v⟩ + constant − target)²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualTerm {
    pub coeffs: LinearForm,
    pub constant: f64,
    pub target: f64,
}

impl ResidualTerm {
    pub fn value(&self, v: &[f64]) -> f64 {
        apply(&self.coeffs, v) + self.constant - self.target
    }
}

/// `⟨coeffs, v⟩ + constant ≤ 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Inequality {
    pub coeffs: LinearForm,
    pub constant: f64,
}

impl Inequality {
    pub fn new(coeffs: LinearForm, constant: f64) -> Self {
        Self { coeffs, constant }
    }

    pub fn value(&self, v: &[f64]) -> f64 {
        apply(&self.coeffs, v) + self.constant
    }

    fn negated(&self) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|&(i, c)| (i, -c)).collect(),
            constant: -self.constant,
        }
    }

    fn is_negation_of(&self, other: &Inequality) -> bool {
        self.constant == -other.constant
            && self.coeffs.len() == other.coeffs.len()
            && self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .all(|(a, b)| a.0 == b.0 && a.1 == -b.1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxBound {
    pub var: usize,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstrainedLsq {
    pub num_vars: usize,
    pub residual_terms: Vec<ResidualTerm>,
    pub inequalities: Vec<Inequality>,
    pub ball_groups: Vec<Vec<usize>>,
    pub box_vars: Vec<BoxBound>,
}

impl ConstrainedLsq {
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            ..Default::default()
        }
    }

    pub fn add_residual(&mut self, coeffs: LinearForm, constant: f64, target: f64) {
        self.residual_terms.push(ResidualTerm {
            coeffs,
            constant,
            target,
        });
    }

    pub fn add_inequality(&mut self, coeffs: LinearForm, constant: f64) {
        self.inequalities.push(Inequality::new(coeffs, constant));
    }

    /// `⟨coeffs, v⟩ + constant = 0`, stored as two opposing inequalities.
    pub fn add_equality(&mut self, coeffs: LinearForm, constant: f64) {
        let le = Inequality::new(coeffs, constant);
        let ge = le.negated();
        self.inequalities.push(le);
        self.inequalities.push(ge);
    }

    pub fn add_ball_group(&mut self, vars: Vec<usize>) {
        self.ball_groups.push(vars);
    }

    pub fn add_box(&mut self, var: usize, lo: f64, hi: f64) {
        self.box_vars.push(BoxBound { var, lo, hi });
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars;
        let forms = self
            .residual_terms
            .iter()
            .map(|t| &t.coeffs)
            .chain(self.inequalities.iter().map(|c| &c.coeffs));
        for form in forms {
            if let Some(&(i, _)) = form.iter().find(|(i, _)| *i >= n) {
                return Err(invalid(format!("coefficient index {i} out of range for {n} variables")));
            }
        }
        let mut seen = vec![false; n];
        for g in &self.ball_groups {
            for &i in g {
                if i >= n {
                    return Err(invalid(format!("ball group index {i} out of range")));
                }
                if seen[i] {
                    return Err(invalid(format!("variable {i} appears in two ball groups")));
                }
                seen[i] = true;
            }
        }
        for b in &self.box_vars {
            if b.var >= n || b.lo.is_nan() || b.hi.is_nan() {
                return Err(invalid(format!("bad box bound {b:?}")));
            }
        }
        Ok(())
    }

    pub fn objective(&self, v: &[f64]) -> f64 {
        self.residual_terms
            .iter()
            .map(|t| {
                let r = t.value(v);
                r * r
            })
            .sum()
    }

    /// Largest amount by which `v` violates any constraint (zero if feasible).
    pub fn max_violation(&self, v: &[f64]) -> f64 {
        let lin = self.inequalities.iter().map(|c| c.value(v));
        let balls = self.ball_groups.iter().map(|g| {
            let sq: f64 = g.iter().map(|&i| v[i] * v[i]).sum();
            sq.sqrt() - 1.0
        });
        let boxes = self
            .box_vars
            .iter()
            .flat_map(|b| [v[b.var] - b.hi, b.lo - v[b.var]]);
        lin.chain(balls).chain(boxes).fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Additive accuracy on the objective value.
    pub beta: f64,
    pub max_iterations: u32,
    pub feasibility_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            beta: 1e-8,
            max_iterations: 100_000,
            feasibility_tol: 1e-8,
        }
    }
}

impl SolverConfig {
    pub fn with_beta(beta: f64) -> Self {
        Self {
            beta,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0;
        if !positive(self.beta) || !positive(self.feasibility_tol) || self.max_iterations == 0 {
            return Err(invalid(format!("invalid solver config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub x: Vec<f64>,
    /// Objective evaluated at `x`.
    pub value: f64,
    /// Certified lower bound on the constrained minimum.
    pub lower_bound: f64,
    pub iterations: u32,
}

/// Minimizes the problem to additive accuracy `cfg.beta`.
pub fn solve(problem: &ConstrainedLsq, cfg: &SolverConfig) -> Result<Solution> {
    cfg.validate()?;
    problem.validate()?;
    solve_unchecked(problem, cfg)
}

/// Finds any point satisfying all equalities and inequalities.
pub fn check_feasible(
    num_vars: usize,
    inequalities: &[Inequality],
    equalities: &[Inequality],
    cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    let mut p = ConstrainedLsq::new(num_vars);
    p.inequalities.extend(inequalities.iter().cloned());
    for e in equalities {
        p.add_equality(e.coeffs.clone(), e.constant);
    }
    solve(&p, cfg).map(|s| s.x)
}

/// Refines an approximate minimizer `x` by treating the constraints that are
/// nearly tight at `x` as equalities and solving the resulting
/// equality-constrained least squares exactly. Returns the refined point
/// when it is feasible and no worse than `x`.
pub fn polish(problem: &ConstrainedLsq, x: &[f64]) -> Option<Vec<f64>> {
    let base = problem.objective(x);
    refine::refine(problem, x)
        .point
        .filter(|(_, value)| *value <= base + 1e-13)
        .map(|(v, _)| v)
}

pub(crate) fn solve_unchecked(problem: &ConstrainedLsq, cfg: &SolverConfig) -> Result<Solution> {
    let n = problem.num_vars;
    if n == 0 {
        if problem.max_violation(&[]) > cfg.feasibility_tol {
            return Err(Error::Infeasible);
        }
        let value = problem.objective(&[]);
        return Ok(Solution {
            x: vec![],
            value,
            lower_bound: value,
            iterations: 0,
        });
    }

    let qp = ConicForm::build(problem);
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(cfg.max_iterations)
        .tol_gap_abs((0.1 * cfg.beta).clamp(1e-12, 1e-9))
        .tol_gap_rel(1e-10)
        .tol_feas((0.1 * cfg.feasibility_tol).clamp(1e-12, 1e-9))
        .tol_infeas_abs(1e-10)
        .tol_infeas_rel(1e-10)
        .build()
        .map_err(|e| Error::NonConverged(format!("solver settings: {e:?}")))?;

    let mut solver = DefaultSolver::new(&qp.p, &qp.q, &qp.a, &qp.b, &qp.cones, settings)
        .map_err(|e| Error::NonConverged(format!("solver setup: {e:?}")))?;
    solver.solve();
    let sol = &solver.solution;

    let converged = match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => true,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            return Err(Error::Infeasible)
        }
        SolverStatus::MaxIterations
        | SolverStatus::MaxTime
        | SolverStatus::InsufficientProgress
        | SolverStatus::NumericalError
            if sol.x.iter().all(|v| v.is_finite()) =>
        {
            false
        }
        other => return Err(Error::NonConverged(format!("solver status {other:?}"))),
    };

    let mut x = sol.x.clone();
    polish_into_convex_sets(problem, &mut x);
    let violation = problem.max_violation(&x);
    let mut value = if violation <= cfg.feasibility_tol {
        problem.objective(&x)
    } else {
        f64::INFINITY
    };
    let mut lower_bound = if converged {
        sol.obj_val_dual + qp.offset
    } else {
        0.0
    };
    // Interior-point gaps stall around 1e-10 relative; an exact solve on
    // the nearly active face plus a Lagrangian bound closes them.
    if value - lower_bound > cfg.beta && n <= refine::MAX_VARS {
        let r = refine::refine(problem, &x);
        if let Some((p, v)) = r.point {
            if v < value && problem.max_violation(&p) <= cfg.feasibility_tol {
                x = p;
                value = v;
            }
        }
        lower_bound = lower_bound.max(r.lower_bound);
    }
    if value.is_infinite() {
        return Err(Error::NonConverged(format!(
            "solution violates constraints by {violation:e}"
        )));
    }
    let lower_bound = lower_bound.clamp(0.0, value);
    if value - lower_bound > cfg.beta {
        return Err(Error::NonConverged(format!(
            "duality gap {:e} exceeds beta {:e}",
            value - lower_bound,
            cfg.beta
        )));
    }
    Ok(Solution {
        x,
        value,
        lower_bound,
        iterations: sol.iterations,
    })
}

/// Snaps interior-point iterates onto ball groups and boxes exactly.
fn polish_into_convex_sets(problem: &ConstrainedLsq, x: &mut [f64]) {
    for g in &problem.ball_groups {
        let nrm = g.iter().map(|&i| x[i] * x[i]).sum::<f64>().sqrt();
        if nrm > 1.0 {
            for &i in g {
                x[i] /= nrm;
            }
        }
    }
    for b in &problem.box_vars {
        x[b.var] = x[b.var].clamp(b.lo, b.hi);
    }
}

/// `½ xᵀPx + qᵀx + offset` subject to `Ax + s = b`, `s ∈ K`.
struct ConicForm {
    p: CscMatrix<f64>,
    q: Vec<f64>,
    offset: f64,
    a: CscMatrix<f64>,
    b: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
}

impl ConicForm {
    fn build(problem: &ConstrainedLsq) -> Self {
        let n = problem.num_vars;

        // P = 2 CᵀC, q = 2 Cᵀ(d − t), offset = ‖d − t‖².
        let mut p_entries: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut q = vec![0.0; n];
        let mut offset = 0.0;
        for t in &problem.residual_terms {
            let shift = t.constant - t.target;
            offset += shift * shift;
            for (a, &(i, ci)) in t.coeffs.iter().enumerate() {
                q[i] += 2.0 * shift * ci;
                for &(j, cj) in &t.coeffs[a..] {
                    let (row, col) = if i <= j { (i, j) } else { (j, i) };
                    *p_entries.entry((col, row)).or_insert(0.0) += 2.0 * ci * cj;
                }
            }
        }
        // Repeated indices inside one form would double count off-diagonals;
        // forms built by this crate never repeat an index.
        let p = csc_from_sorted(n, n, p_entries.into_iter());

        let mut rows: Vec<(LinearForm, f64)> = Vec::new();
        let mut cones = Vec::new();

        let ineqs = &problem.inequalities;
        let mut is_eq_pair = vec![false; ineqs.len()];
        let mut i = 0;
        while i + 1 < ineqs.len() {
            if ineqs[i].is_negation_of(&ineqs[i + 1]) {
                is_eq_pair[i] = true;
                is_eq_pair[i + 1] = true;
                i += 2;
            } else {
                i += 1;
            }
        }
        let mut zero_rows = 0;
        let mut k = 0;
        while k < ineqs.len() {
            if is_eq_pair[k] {
                rows.push((ineqs[k].coeffs.clone(), -ineqs[k].constant));
                zero_rows += 1;
                k += 2;
            } else {
                k += 1;
            }
        }
        if zero_rows > 0 {
            cones.push(SupportedConeT::ZeroConeT(zero_rows));
        }

        let mut nonneg = 0;
        for (c, eq) in ineqs.iter().zip(&is_eq_pair) {
            if !eq {
                rows.push((c.coeffs.clone(), -c.constant));
                nonneg += 1;
            }
        }
        for bx in &problem.box_vars {
            if bx.hi.is_finite() {
                rows.push((vec![(bx.var, 1.0)], bx.hi));
                nonneg += 1;
            }
            if bx.lo.is_finite() {
                rows.push((vec![(bx.var, -1.0)], -bx.lo));
                nonneg += 1;
            }
        }
        if nonneg == 0 && problem.ball_groups.is_empty() && zero_rows == 0 {
            // Clarabel wants at least one constraint row: 0 ≤ 1.
            rows.push((vec![], 1.0));
            nonneg += 1;
        }
        if nonneg > 0 {
            cones.push(SupportedConeT::NonnegativeConeT(nonneg));
        }
        for g in &problem.ball_groups {
            rows.push((vec![], 1.0));
            for &v in g {
                rows.push((vec![(v, -1.0)], 0.0));
            }
            cones.push(SupportedConeT::SecondOrderConeT(g.len() + 1));
        }

        let m = rows.len();
        let mut a_entries: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        let mut b = Vec::with_capacity(m);
        for (r, (form, rhs)) in rows.into_iter().enumerate() {
            for (v, c) in form {
                if c != 0.0 {
                    *a_entries.entry((v, r)).or_insert(0.0) += c;
                }
            }
            b.push(rhs);
        }
        let a = csc_from_sorted(m, n, a_entries.into_iter());
        Self {
            p,
            q,
            offset,
            a,
            b,
            cones,
        }
    }
}

/// Builds a CSC matrix from `((col, row), value)` entries sorted by column then row.
fn csc_from_sorted(
    nrows: usize,
    ncols: usize,
    entries: impl Iterator<Item = ((usize, usize), f64)>,
) -> CscMatrix<f64> {
    let mut colptr = vec![0usize; ncols + 1];
    let mut rowval = Vec::new();
    let mut nzval = Vec::new();
    for ((col, row), v) in entries {
        colptr[col + 1] += 1;
        rowval.push(row);
        nzval.push(v);
    }
    for c in 0..ncols {
        colptr[c + 1] += colptr[c];
    }
    CscMatrix::new(nrows, ncols, colptr, rowval, nzval)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SolverConfig {
        SolverConfig::default()
    }

    #[test]
    fn unconstrained_scalar_least_squares() {
        let mut p = ConstrainedLsq::new(1);
        p.add_residual(vec![(0, 1.0)], 0.0, 3.0);
        let s = solve(&p, &cfg()).unwrap();
        assert!((s.x[0] - 3.0).abs() < 1e-6);
        assert!(s.value < 1e-8);
        assert_eq!(s.value, p.objective(&s.x));
    }

    #[test]
    fn active_halfspace() {
        // (v − 3)² s.t. v ≤ 0: KKT gives v = 0 with multiplier 6.
        let mut p = ConstrainedLsq::new(1);
        p.add_residual(vec![(0, 1.0)], 0.0, 3.0);
        p.add_inequality(vec![(0, 1.0)], 0.0);
        let s = solve(&p, &cfg()).unwrap();
        assert!(s.x[0].abs() < 1e-8);
        assert!((s.value - 9.0).abs() < 1e-7);
        assert!(s.lower_bound <= s.value && s.value - s.lower_bound <= 1e-8);
    }

    #[test]
    fn contradictory_halfspaces_are_infeasible() {
        let mut p = ConstrainedLsq::new(1);
        p.add_inequality(vec![(0, 1.0)], 1.0); // v ≤ -1
        p.add_inequality(vec![(0, -1.0)], 1.0); // v ≥ 1
        assert!(matches!(solve(&p, &cfg()), Err(Error::Infeasible)));
    }

    #[test]
    fn feasibility_examples() {
        let x = check_feasible(2, &[], &[], &cfg()).unwrap();
        assert_eq!(x.len(), 2);

        let eq = Inequality::new(vec![(0, 1.0)], -1.0); // v₁ = 1
        let le = Inequality::new(vec![(0, 1.0)], 0.0); // v₁ ≤ 0
        assert!(matches!(
            check_feasible(1, &[le], std::slice::from_ref(&eq), &cfg()),
            Err(Error::Infeasible)
        ));
        let x = check_feasible(1, &[], &[eq], &cfg()).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn ball_and_box_constraints() {
        // Pull (v₀, v₁) toward (3, 4) inside the unit ball, v₂ toward 5 inside [-1, 1].
        let mut p = ConstrainedLsq::new(3);
        p.add_residual(vec![(0, 1.0)], 0.0, 3.0);
        p.add_residual(vec![(1, 1.0)], 0.0, 4.0);
        p.add_residual(vec![(2, 1.0)], 0.0, 5.0);
        p.add_ball_group(vec![0, 1]);
        p.add_box(2, -1.0, 1.0);
        let s = solve(&p, &cfg()).unwrap();
        assert!((s.x[0] - 0.6).abs() < 1e-6 && (s.x[1] - 0.8).abs() < 1e-6);
        assert!((s.x[2] - 1.0).abs() < 1e-8);
        // distance² from (3,4) to the unit circle is 16, plus (5-1)² = 16
        assert!((s.value - 32.0).abs() < 1e-7);
        assert_eq!(p.max_violation(&s.x), 0.0);
    }

    #[test]
    fn equality_pairs_are_detected() {
        let mut p = ConstrainedLsq::new(2);
        p.add_equality(vec![(0, 1.0), (1, 1.0)], -2.0);
        p.add_residual(vec![(0, 1.0)], 0.0, 0.0);
        p.add_residual(vec![(1, 1.0)], 0.0, 0.0);
        let form = ConicForm::build(&p);
        assert!(matches!(form.cones[0], SupportedConeT::ZeroConeT(1)));
        let s = solve(&p, &cfg()).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-6 && (s.x[1] - 1.0).abs() < 1e-6);
        assert!((s.value - 2.0).abs() < 1e-8);
    }

    #[test]
    fn zero_variable_problem() {
        let mut p = ConstrainedLsq::new(0);
        p.add_residual(vec![], 0.0, 2.0);
        let s = solve(&p, &cfg()).unwrap();
        assert_eq!(s.value, 4.0);
        p.add_inequality(vec![], 1.0);
        assert!(matches!(solve(&p, &cfg()), Err(Error::Infeasible)));
    }

    #[test]
    fn rejects_malformed_problems() {
        let mut p = ConstrainedLsq::new(2);
        p.add_residual(vec![(2, 1.0)], 0.0, 0.0);
        assert!(solve(&p, &cfg()).is_err());
        let mut q = ConstrainedLsq::new(2);
        q.add_ball_group(vec![0, 1]);
        q.add_ball_group(vec![1]);
        assert!(solve(&q, &cfg()).is_err());
        let bad = SolverConfig {
            beta: 0.0,
            ..cfg()
        };
        assert!(solve(&ConstrainedLsq::new(1), &bad).is_err());
    }

    #[test]
    fn deterministic_output() {
        let mut p = ConstrainedLsq::new(3);
        for (i, t) in [(0usize, 1.0), (1, -2.0), (2, 0.5)] {
            p.add_residual(vec![(i, 1.0), ((i + 1) % 3, 0.3)], 0.1, t);
        }
        p.add_inequality(vec![(0, 1.0), (1, 1.0)], -0.2);
        p.add_ball_group(vec![1, 2]);
        let a = solve(&p, &cfg()).unwrap();
        let b = solve(&p, &cfg()).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.value.to_bits(), b.value.to_bits());
    }
}
