//! Zero-error fitting of a single ReLU by linear feasibility.
//!
//! `[⟨w,x⟩ + b]₊ = y` is equivalent to `⟨w,x⟩ + b = y` when `y > 0`,
//! to `⟨w,x⟩ + b ≤ 0` when `y = 0`, and is unsatisfiable when `y < 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{eval_unit, ReluNet, SampleSet, Sign};
use crate::subproblem::{check_feasible, sparse, Inequality, SolverConfig};

/// Largest accepted `|[⟨w,xᵢ⟩ + b]₊ − yᵢ|` for a returned fit.
pub const FIT_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Realizability {
    Fit { weights: Vec<f64>, bias: f64 },
    NotRealizable,
}

impl Realizability {
    pub fn is_realizable(&self) -> bool {
        matches!(self, Self::Fit { .. })
    }

    /// The fit as a one-unit network with coefficient `+1`.
    pub fn to_net(&self) -> Option<ReluNet> {
        match self {
            Self::Fit { weights, bias } => {
                ReluNet::new(vec![Sign::Plus], vec![weights.clone()], vec![*bias]).ok()
            }
            Self::NotRealizable => None,
        }
    }
}

/// Decides whether one ReLU (with or without bias) fits `s` exactly and
/// returns such a fit.
pub fn check_realizable_single(s: &SampleSet, with_bias: bool) -> Result<Realizability> {
    if s.is_empty() {
        return Err(crate::error::invalid("realizability needs at least one sample"));
    }
    if s.labels().iter().any(|&y| y < 0.0) {
        return Ok(Realizability::NotRealizable);
    }
    let n = s.n();
    let dim = n + usize::from(with_bias);
    let lift = |x: &[f64]| -> Vec<f64> {
        let mut v = x.to_vec();
        if with_bias {
            v.push(1.0);
        }
        v
    };

    let mut equalities = Vec::new();
    let mut inequalities = Vec::new();
    for (x, y) in s.iter() {
        let row = sparse(&lift(x));
        if y > 0.0 {
            equalities.push(Inequality::new(row, -y));
        } else {
            inequalities.push(Inequality::new(row, 0.0));
        }
    }

    let cfg = SolverConfig::default();
    let v = match check_feasible(dim, &inequalities, &equalities, &cfg) {
        Ok(v) => v,
        Err(Error::Infeasible) => return Ok(Realizability::NotRealizable),
        Err(e) => return Err(e),
    };
    let weights = v[..n].to_vec();
    let bias = if with_bias { v[n] } else { 0.0 };

    let mut worst: f64 = 0.0;
    for (x, y) in s.iter() {
        worst = worst.max((eval_unit(&weights, bias, x)? - y).abs());
    }
    if worst > FIT_TOL {
        return Err(Error::NonConverged(format!(
            "feasible point leaves a residual of {worst:e}"
        )));
    }
    Ok(Realizability::Fit { weights, bias })
}
