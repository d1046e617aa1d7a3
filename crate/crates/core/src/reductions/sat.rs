use serde::{Deserialize, Serialize};

use super::{brute_force_guard, index_map, unit, PredictedOptimum, ReductionInstance, ReductionSource};
use crate::error::{invalid, Result};
use crate::model::{ReluNet, SampleSet, Sign};

/// 3CNF over variables `1..=num_vars`; literal `-i` is the negation of `i`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnfFormula {
    pub num_vars: usize,
    pub clauses: Vec<[i64; 3]>,
}

impl CnfFormula {
    pub fn new(num_vars: usize, clauses: Vec<[i64; 3]>) -> Result<Self> {
        let f = Self { num_vars, clauses };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        for (c, clause) in self.clauses.iter().enumerate() {
            for &lit in clause {
                if lit == 0 || lit.unsigned_abs() as usize > self.num_vars {
                    return Err(invalid(format!(
                        "clause {c} has literal {lit}, variables are 1..={}",
                        self.num_vars
                    )));
                }
            }
        }
        Ok(())
    }

    /// `assignment[i]` is the value of variable `i + 1`.
    pub fn satisfied_by(&self, assignment: &[bool]) -> bool {
        assignment.len() == self.num_vars
            && self.clauses.iter().all(|clause| {
                clause
                    .iter()
                    .any(|&lit| assignment[lit.unsigned_abs() as usize - 1] == (lit > 0))
            })
    }
}

/// First satisfying assignment in counting order, or `None`.
pub fn brute_force_sat(f: &CnfFormula) -> Result<Option<Vec<bool>>> {
    f.validate()?;
    brute_force_guard(f.num_vars, "3SAT")?;
    Ok((0u64..1 << f.num_vars)
        .map(|bits| (0..f.num_vars).map(|i| bits >> i & 1 == 1).collect::<Vec<bool>>())
        .find(|a| f.satisfied_by(a)))
}

/// Two-unit instance that is realizable exactly when `f` is satisfiable.
///
/// Coordinates: one per variable, then `v`, then (with bias) one dummy.
/// Samples: `v` (label 4); per variable `eᵢ` and `−eᵢ` (label 1); per clause
/// `−v − Σ nₚ e_{iₚ}` with `nₚ = ±1` the literal signs (label 0). The bias
/// variant adds `0` (label 0), `±e_d` (label 1) and `±2e_d` (label 2), which
/// pin both biases to zero in any exact fit.
pub fn gen_3sat(f: &CnfFormula, with_bias: bool) -> Result<ReductionInstance> {
    f.validate()?;
    let nv = f.num_vars;
    let v = nv;
    let n = nv + 1 + usize::from(with_bias);

    let mut points = Vec::new();
    let mut labels = Vec::new();
    points.push(unit(n, v, 1.0));
    labels.push(4.0);
    for i in 0..nv {
        points.push(unit(n, i, 1.0));
        labels.push(1.0);
        points.push(unit(n, i, -1.0));
        labels.push(1.0);
    }
    for clause in &f.clauses {
        let mut x = unit(n, v, -1.0);
        for &lit in clause {
            x[lit.unsigned_abs() as usize - 1] -= lit.signum() as f64;
        }
        points.push(x);
        labels.push(0.0);
    }
    if with_bias {
        let d = nv + 1;
        for (scale, label) in [(0.0, 0.0), (1.0, 1.0), (-1.0, 1.0), (2.0, 2.0), (-2.0, 2.0)] {
            points.push(unit(n, d, scale));
            labels.push(label);
        }
    }

    let mut names: Vec<String> = (1..=nv).map(|i| format!("x{i}")).collect();
    names.push("v".into());
    if with_bias {
        names.push("v_dummy".into());
    }
    let satisfiable = if nv <= super::BRUTE_FORCE_MAX_BITS {
        Some(brute_force_sat(f)?.is_some())
    } else {
        None
    };
    Ok(ReductionInstance {
        source: ReductionSource::ThreeSat(f.clone()),
        with_bias,
        units: 2,
        epsilon: None,
        predicted_optimum: PredictedOptimum::ZeroIffSatisfiable { satisfiable },
        variable_index_map: index_map(names),
        samples: SampleSet::with_dim(n, points, labels)?,
    })
}

/// Zero-error net for a satisfying assignment: `v¹ = 1`, `v² = 3`,
/// `w¹ᵢ = 2φ(i) − 1`, `w²ᵢ = 1 − 2φ(i)`, dummy weights `±1`, zero biases.
pub fn threesat_witness(f: &CnfFormula, assignment: &[bool], with_bias: bool) -> Result<ReluNet> {
    f.validate()?;
    if !f.satisfied_by(assignment) {
        return Err(invalid("the assignment does not satisfy the formula"));
    }
    let mut w1: Vec<f64> = assignment.iter().map(|&t| if t { 1.0 } else { -1.0 }).collect();
    let mut w2: Vec<f64> = w1.iter().map(|x| -x).collect();
    w1.push(1.0);
    w2.push(3.0);
    if with_bias {
        w1.push(1.0);
        w2.push(-1.0);
    }
    ReluNet::new(vec![Sign::Plus; 2], vec![w1, w2], vec![0.0; 2])
}
