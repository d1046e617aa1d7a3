use serde::{Deserialize, Serialize};

use super::{brute_force_guard, index_map, unit, PredictedOptimum, ReductionInstance, ReductionSource};
use crate::error::{invalid, Result};
use crate::model::{ReluNet, SampleSet, Sign};

/// Universe `{1, …, universe_size}`, a family of subsets, and a target size.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetCoverInstance {
    pub universe_size: usize,
    pub subsets: Vec<Vec<usize>>,
    pub k: usize,
}

impl SetCoverInstance {
    pub fn new(universe_size: usize, subsets: Vec<Vec<usize>>, k: usize) -> Result<Self> {
        let sc = Self {
            universe_size,
            subsets,
            k,
        };
        sc.validate()?;
        Ok(sc)
    }

    pub fn validate(&self) -> Result<()> {
        if self.subsets.is_empty() {
            return Err(invalid("set cover needs at least one subset"));
        }
        for (j, s) in self.subsets.iter().enumerate() {
            if let Some(&e) = s.iter().find(|&&e| e == 0 || e > self.universe_size) {
                return Err(invalid(format!(
                    "subset {j} contains {e}, outside 1..={}",
                    self.universe_size
                )));
            }
        }
        if self.k == 0 || self.k > self.subsets.len() {
            return Err(invalid(format!(
                "target k = {} must lie in 1..={}",
                self.k,
                self.subsets.len()
            )));
        }
        Ok(())
    }

    /// Whether the subsets with the given (0-based) indices cover the universe.
    pub fn covers(&self, chosen: &[usize]) -> bool {
        let mut hit = vec![false; self.universe_size + 1];
        for &j in chosen {
            if let Some(s) = self.subsets.get(j) {
                for &e in s {
                    hit[e] = true;
                }
            }
        }
        hit[1..].iter().all(|&h| h)
    }

    fn num_samples(&self) -> usize {
        self.universe_size + self.subsets.len() + self.k + 2
    }

    /// `0.01 / m²`, with `m` the total number of generated samples.
    pub fn epsilon(&self) -> f64 {
        let m = self.num_samples() as f64;
        0.01 / (m * m)
    }
}

/// Size of a smallest cover, by exhaustive search over subfamilies.
pub fn brute_force_setcover(sc: &SetCoverInstance) -> Result<usize> {
    sc.validate()?;
    let m = sc.subsets.len();
    brute_force_guard(m, "set cover")?;
    let element_masks: Vec<u64> = sc
        .subsets
        .iter()
        .map(|s| s.iter().fold(0u64, |acc, &e| acc | 1 << (e - 1)))
        .collect();
    let full: u64 = if sc.universe_size == 64 {
        u64::MAX
    } else {
        (1u64 << sc.universe_size) - 1
    };
    if sc.universe_size > 64 {
        return Err(invalid("brute force supports universes of at most 64 elements"));
    }
    (0u64..1 << m)
        .filter(|family| {
            let union = (0..m)
                .filter(|j| family >> j & 1 == 1)
                .fold(0u64, |acc, j| acc | element_masks[j]);
            union == full
        })
        .map(|family| family.count_ones() as usize)
        .min()
        .ok_or_else(|| invalid("the subsets do not cover the universe"))
}

/// Single-unit instance whose minimum squared error is `ε² · k*` for every
/// target `k ≥ k*`.
///
/// Coordinates: one per subset, then `w₁`, then `w_ε`. Samples, in order:
/// one per element (`w₁` plus every subset containing it, label 0), one per
/// subset (that subset plus `w_ε`, label ε), `w₁` alone (label 1), and
/// `k + 1` copies of `w_ε` alone (label ε). A bias needs no extra samples:
/// every sample has exactly one of `w₁`, `w_ε` set, so the bias folds into them.
pub fn gen_setcover(sc: &SetCoverInstance, with_bias: bool) -> Result<ReductionInstance> {
    sc.validate()?;
    let m_sets = sc.subsets.len();
    let n = m_sets + 2;
    let (w1, we) = (m_sets, m_sets + 1);
    let eps = sc.epsilon();

    let mut points = Vec::with_capacity(sc.num_samples());
    let mut labels = Vec::with_capacity(sc.num_samples());
    for e in 1..=sc.universe_size {
        let mut x = unit(n, w1, 1.0);
        for (j, s) in sc.subsets.iter().enumerate() {
            if s.contains(&e) {
                x[j] = 1.0;
            }
        }
        points.push(x);
        labels.push(0.0);
    }
    for j in 0..m_sets {
        let mut x = unit(n, j, 1.0);
        x[we] = 1.0;
        points.push(x);
        labels.push(eps);
    }
    points.push(unit(n, w1, 1.0));
    labels.push(1.0);
    for _ in 0..=sc.k {
        points.push(unit(n, we, 1.0));
        labels.push(eps);
    }

    let names = (1..=m_sets)
        .map(|j| format!("w_S{j}"))
        .chain(["w_1".to_string(), "w_eps".to_string()]);
    let opt = if m_sets <= super::BRUTE_FORCE_MAX_BITS {
        brute_force_setcover(sc).ok()
    } else {
        None
    };
    Ok(ReductionInstance {
        source: ReductionSource::SetCover(sc.clone()),
        with_bias,
        units: 1,
        epsilon: Some(eps),
        predicted_optimum: PredictedOptimum::EpsilonSquaredTimesOpt {
            epsilon_sq: eps * eps,
            opt,
        },
        variable_index_map: index_map(names),
        samples: SampleSet::new(points, labels)?,
    })
}

/// Net with weight −1 on each chosen subset, 1 on `w₁`, ε on `w_ε`, bias 0.
/// Its loss on the instance is `ε² · |cover|`.
pub fn setcover_witness(sc: &SetCoverInstance, cover: &[usize]) -> Result<ReluNet> {
    sc.validate()?;
    if let Some(&j) = cover.iter().find(|&&j| j >= sc.subsets.len()) {
        return Err(invalid(format!("cover names subset {j}, only {} exist", sc.subsets.len())));
    }
    if !sc.covers(cover) {
        return Err(invalid("the chosen subsets do not cover the universe"));
    }
    let m_sets = sc.subsets.len();
    let mut w = vec![0.0; m_sets + 2];
    for &j in cover {
        w[j] = -1.0;
    }
    w[m_sets] = 1.0;
    w[m_sets + 1] = sc.epsilon();
    ReluNet::new(vec![Sign::Plus], vec![w], vec![0.0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::squared_loss;

    #[test]
    fn tiny_instance_shape() {
        let sc = SetCoverInstance::new(1, vec![vec![1]], 1).unwrap();
        let inst = gen_setcover(&sc, false).unwrap();
        assert_eq!(inst.samples.m(), 5);
        assert_eq!(inst.samples.n(), 3);
        assert_eq!(inst.epsilon, Some(0.01 / 25.0));
        assert_eq!(inst.variable_index_map["w_eps"], 2);
    }

    #[test]
    fn witness_loss_is_eps_squared_per_set() {
        let sc = SetCoverInstance::new(3, vec![vec![1, 2], vec![3], vec![2, 3], vec![1]], 2).unwrap();
        let inst = gen_setcover(&sc, false).unwrap();
        let eps = inst.epsilon.unwrap();
        for cover in [vec![0, 1], vec![0, 2], vec![1, 2, 3]] {
            let net = setcover_witness(&sc, &cover).unwrap();
            let loss = squared_loss(&net, &inst.samples).unwrap();
            assert!((loss - eps * eps * cover.len() as f64).abs() <= 1e-12);
        }
        assert!(setcover_witness(&sc, &[1]).is_err());
    }

    #[test]
    fn brute_force_examples() {
        let sc = SetCoverInstance::new(2, vec![vec![1], vec![2], vec![1, 2]], 1).unwrap();
        assert_eq!(brute_force_setcover(&sc).unwrap(), 1);
        let sc = SetCoverInstance::new(3, vec![vec![1], vec![2], vec![3]], 3).unwrap();
        assert_eq!(brute_force_setcover(&sc).unwrap(), 3);
        let uncovered = SetCoverInstance::new(2, vec![vec![1]], 1).unwrap();
        assert!(brute_force_setcover(&uncovered).is_err());
    }

    #[test]
    fn validation() {
        assert!(SetCoverInstance::new(2, vec![vec![3]], 1).is_err());
        assert!(SetCoverInstance::new(2, vec![], 1).is_err());
        assert!(SetCoverInstance::new(2, vec![vec![1]], 2).is_err());
    }
}
