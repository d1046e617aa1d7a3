//! Active-face refinement and a Lagrangian lower bound for
//! [`ConstrainedLsq`](super::ConstrainedLsq).
//!
//! For rows `cᵢ(v) ≤ 0` and multipliers `λ ≥ 0`, the Lagrangian
//! `f(v) + Σ λᵢ cᵢ(v)` is a convex quadratic whose minimum is a lower bound on
//! the constrained minimum. Ball constraints are dropped, which only weakens
//! the bound.

use nalgebra::{DMatrix, DVector};

use super::{ConstrainedLsq, LinearForm};

/// Problems with more variables are left to the conic solver alone.
pub(super) const MAX_VARS: usize = 400;

const THRESHOLDS: [f64; 4] = [1e-9, 1e-7, 1e-5, 1e-3];

pub(super) struct Refined {
    /// Best feasible point found on a candidate face, with its objective.
    pub point: Option<(Vec<f64>, f64)>,
    /// `-∞` when no certificate could be formed.
    pub lower_bound: f64,
}

/// A constraint row `⟨coeffs, v⟩ + constant ≤ 0`.
struct Row {
    coeffs: LinearForm,
    constant: f64,
}

impl Row {
    fn value(&self, v: &[f64]) -> f64 {
        self.coeffs.iter().map(|&(i, c)| c * v[i]).sum::<f64>() + self.constant
    }
}

pub(super) fn refine(problem: &ConstrainedLsq, x: &[f64]) -> Refined {
    let n = problem.num_vars;
    let mut out = Refined {
        point: None,
        lower_bound: f64::NEG_INFINITY,
    };
    if n == 0 || x.len() != n || n > MAX_VARS {
        return out;
    }
    let mut a = DMatrix::zeros(problem.residual_terms.len(), n);
    let mut t = DVector::zeros(problem.residual_terms.len());
    for (r, term) in problem.residual_terms.iter().enumerate() {
        for &(i, c) in &term.coeffs {
            a[(r, i)] += c;
        }
        t[r] = term.target - term.constant;
    }
    let rows: Vec<Row> = problem
        .inequalities
        .iter()
        .map(|c| Row {
            coeffs: c.coeffs.clone(),
            constant: c.constant,
        })
        .chain(problem.box_vars.iter().flat_map(|b| {
            [
                Row {
                    coeffs: vec![(b.var, -1.0)],
                    constant: b.lo,
                },
                Row {
                    coeffs: vec![(b.var, 1.0)],
                    constant: -b.hi,
                },
            ]
        }))
        .collect();
    let curvature = Curvature::new(&a);

    for thr in THRESHOLDS {
        let active: Vec<&Row> = rows.iter().filter(|r| r.value(x) >= -thr).collect();
        let face = face_lsq(&a, &t, &active, n);
        if let Some(v) = &face {
            if problem.max_violation(v) <= 1e-12 {
                let value = problem.objective(v);
                if out.point.as_ref().is_none_or(|(_, b)| value < *b) {
                    out.point = Some((v.clone(), value));
                }
            }
        }
        let at = face.as_deref().unwrap_or(x);
        if let Some(lb) = lagrangian_bound(problem, &a, &t, &curvature, &active, at) {
            out.lower_bound = out.lower_bound.max(lb);
        }
    }
    out
}

/// Minimizes `‖Av − t‖²` subject to every row holding with equality:
/// a particular solution of the rows, then least squares over their null space.
fn face_lsq(a: &DMatrix<f64>, t: &DVector<f64>, rows: &[&Row], n: usize) -> Option<Vec<f64>> {
    let (x0, null) = if rows.is_empty() {
        (DVector::zeros(n), DMatrix::identity(n, n))
    } else {
        let mut c = DMatrix::zeros(rows.len(), n);
        let mut d = DVector::zeros(rows.len());
        for (r, row) in rows.iter().enumerate() {
            for &(i, v) in &row.coeffs {
                c[(r, i)] += v;
            }
            d[r] = -row.constant;
        }
        let x0 = c.clone().svd(true, true).solve(&d, 1e-12).ok()?;
        if (&c * &x0 - &d).amax() > 1e-10 {
            return None;
        }
        let eig = (c.transpose() * &c).symmetric_eigen();
        let top = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
        let cols: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] <= 1e-12 * top).collect();
        (x0, eig.eigenvectors.select_columns(&cols))
    };
    let v = if null.ncols() == 0 {
        x0
    } else {
        let an = a * &null;
        let z = an.svd(true, true).solve(&(t - a * &x0), 1e-14).ok()?;
        x0 + null * z
    };
    v.iter().all(|c| c.is_finite()).then(|| v.iter().copied().collect())
}

/// Eigen-decomposition of `AᵀA`, the (halved) Hessian of the objective.
struct Curvature {
    vectors: DMatrix<f64>,
    values: DVector<f64>,
    cutoff: f64,
}

impl Curvature {
    fn new(a: &DMatrix<f64>) -> Self {
        let eig = (a.transpose() * a).symmetric_eigen();
        let cutoff = 1e-12 * eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
        Self {
            vectors: eig.eigenvectors,
            values: eig.eigenvalues,
            cutoff,
        }
    }

    /// `min_d rᵀd + dᵀ(AᵀA)d = −¼ rᵀ(AᵀA)⁺r`, or `None` when `r` has a
    /// component along a flat direction (the minimum is then unbounded).
    fn min_decrease(&self, r: &DVector<f64>, scale: f64) -> Option<f64> {
        let coords = self.vectors.transpose() * r;
        let mut quad = 0.0;
        let mut flat = 0.0;
        for (c, &lam) in coords.iter().zip(self.values.iter()) {
            if lam > self.cutoff {
                quad += c * c / lam;
            } else {
                flat += c * c;
            }
        }
        (flat.sqrt() <= 1e-12 * scale).then_some(-0.25 * quad)
    }
}

fn lagrangian_bound(
    problem: &ConstrainedLsq,
    a: &DMatrix<f64>,
    t: &DVector<f64>,
    curvature: &Curvature,
    rows: &[&Row],
    at: &[f64],
) -> Option<f64> {
    let n = problem.num_vars;
    let p = DVector::from_column_slice(at);
    let g = a.transpose() * (a * &p - t) * 2.0;
    let mut m = DMatrix::zeros(n, rows.len());
    for (j, row) in rows.iter().enumerate() {
        for &(i, c) in &row.coeffs {
            m[(i, j)] += c;
        }
    }
    let lambda = nnls(&m, &(-&g));
    let r = &g + &m * &lambda;
    let lagrangian = problem.objective(at)
        + rows
            .iter()
            .zip(lambda.iter())
            .map(|(row, l)| l * row.value(at))
            .sum::<f64>();
    let scale = 1.0 + g.amax();
    Some(lagrangian + curvature.min_decrease(&r, scale)?)
}

/// Lawson-Hanson non-negative least squares: `min ‖Mλ − h‖`, `λ ≥ 0`.
fn nnls(m: &DMatrix<f64>, h: &DVector<f64>) -> DVector<f64> {
    let cols = m.ncols();
    let mut lambda = DVector::zeros(cols);
    if cols == 0 {
        return lambda;
    }
    let mut passive = vec![false; cols];
    let tol = 1e-14 * (1.0 + h.amax()) * (1.0 + m.amax());
    for _ in 0..3 * cols.max(m.nrows()) {
        let w = m.transpose() * (h - m * &lambda);
        let Some(j) = (0..cols)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&p, &q| w[p].total_cmp(&w[q]))
        else {
            break;
        };
        passive[j] = true;
        loop {
            let idx: Vec<usize> = (0..cols).filter(|&i| passive[i]).collect();
            let Ok(zp) = m.select_columns(&idx).svd(true, true).solve(h, 1e-14) else {
                return lambda;
            };
            let mut z = DVector::zeros(cols);
            for (k, &i) in idx.iter().enumerate() {
                z[i] = zp[k];
            }
            if idx.iter().all(|&i| z[i] > 0.0) {
                lambda = z;
                break;
            }
            let step = idx
                .iter()
                .filter(|&&i| z[i] <= 0.0)
                .map(|&i| lambda[i] / (lambda[i] - z[i]))
                .fold(f64::INFINITY, f64::min);
            lambda += (z - &lambda) * step;
            for &i in &idx {
                if lambda[i] <= tol {
                    lambda[i] = 0.0;
                    passive[i] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    lambda
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nnls_matches_hand_solution() {
        // min (λ₁ − 1)² + (λ₂ + 1)², λ ≥ 0 → (1, 0).
        let m = DMatrix::identity(2, 2);
        let h = DVector::from_vec(vec![1.0, -1.0]);
        let l = nnls(&m, &h);
        assert!((l[0] - 1.0).abs() < 1e-14 && l[1] == 0.0);
    }

    #[test]
    fn bound_is_tight_on_active_constraint() {
        // min (v − 2)² s.t. v − 1 ≤ 0: optimum 1 at v = 1.
        let mut p = ConstrainedLsq::new(1);
        p.add_residual(vec![(0, 1.0)], 0.0, 2.0);
        p.add_inequality(vec![(0, 1.0)], -1.0);
        let r = refine(&p, &[0.999_999_9]);
        let (v, value) = r.point.unwrap();
        assert_eq!(v, vec![1.0]);
        assert_eq!(value, 1.0);
        assert!((r.lower_bound - 1.0).abs() < 1e-14);
    }

    #[test]
    fn flat_direction_without_gradient_is_harmless() {
        // v₁ does not enter the objective and is only bounded above.
        let mut p = ConstrainedLsq::new(2);
        p.add_residual(vec![(0, 1.0)], 0.0, 1.0);
        p.add_inequality(vec![(1, 1.0)], -5.0);
        let r = refine(&p, &[1.0, 5.0]);
        assert!((r.lower_bound - 0.0).abs() < 1e-14);
    }
}
