//! Seeded random source instances and the fixed circuit collection.

use rand::Rng;

use crate::error::Result;
use crate::reductions::{brute_force_setcover, CnfFormula, Gate, GateKind, MonotoneCircuit, SetCoverInstance};

/// Universe of `1..=6` elements, `1..=6` subsets (each element kept with
/// probability 0.4, uncovered elements patched into a random subset), and a
/// target `k` uniform on `[k*, M]`.
pub fn random_setcover<R: Rng + ?Sized>(rng: &mut R, max_universe: usize, max_sets: usize) -> Result<SetCoverInstance> {
    let n = rng.random_range(1..=max_universe);
    let m = rng.random_range(1..=max_sets);
    let mut subsets: Vec<Vec<usize>> = (0..m)
        .map(|_| (1..=n).filter(|_| rng.random_bool(0.4)).collect())
        .collect();
    for e in 1..=n {
        if !subsets.iter().any(|s| s.contains(&e)) {
            let j = rng.random_range(0..m);
            subsets[j].push(e);
            subsets[j].sort_unstable();
        }
    }
    let k_star = brute_force_setcover(&SetCoverInstance::new(n, subsets.clone(), m)?)?;
    let k = rng.random_range(k_star..=m);
    SetCoverInstance::new(n, subsets, k)
}

/// A 3CNF with `1..=max_vars` variables and `1..=max_clauses` clauses. One
/// draw in three plants a contradiction (all eight sign patterns over three
/// variables, or `x ∧ ¬x` when fewer exist) so both answers occur.
pub fn random_3cnf<R: Rng + ?Sized>(rng: &mut R, max_vars: usize, max_clauses: usize) -> Result<CnfFormula> {
    let nv = rng.random_range(1..=max_vars);
    let lit = |rng: &mut R| -> i64 {
        let v = rng.random_range(1..=nv) as i64;
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    };
    let mut clauses: Vec<[i64; 3]> = Vec::new();
    if rng.random_bool(1.0 / 3.0) {
        if nv >= 3 && max_clauses >= 8 {
            for mask in 0..8 {
                let s = |b: i64, v: i64| if mask >> b & 1 == 1 { -v } else { v };
                clauses.push([s(0, 1), s(1, 2), s(2, 3)]);
            }
        } else {
            let v = rng.random_range(1..=nv) as i64;
            clauses.push([v, v, v]);
            clauses.push([-v, -v, -v]);
        }
    }
    let target = rng.random_range(clauses.len().max(1)..=max_clauses.max(clauses.len()));
    while clauses.len() < target {
        clauses.push([lit(rng), lit(rng), lit(rng)]);
    }
    CnfFormula::new(nv, clauses)
}

fn circuit(inputs: usize, gates: &[(GateKind, &[usize])]) -> MonotoneCircuit {
    let size = inputs + gates.len();
    let gates: Vec<Gate> = gates
        .iter()
        .enumerate()
        .map(|(i, (kind, ins))| Gate {
            kind: *kind,
            inputs: ins.to_vec(),
            output: inputs + 1 + i,
        })
        .collect();
    MonotoneCircuit::new((1..=size).collect(), (1..=inputs).collect(), size, gates)
        .expect("hand-built circuits are valid")
}

/// Ten monotone circuits with at most 8 wires and depth at most 3; the
/// output is the last wire.
pub fn hand_built_circuits() -> Vec<MonotoneCircuit> {
    use GateKind::{And, Or};
    vec![
        circuit(2, &[(And, &[1, 2])]),
        circuit(2, &[(Or, &[1, 2])]),
        circuit(3, &[(And, &[1, 2, 3])]),
        circuit(4, &[(And, &[1, 2]), (And, &[3, 4]), (Or, &[5, 6])]),
        circuit(4, &[(Or, &[1, 2]), (Or, &[3, 4]), (And, &[5, 6])]),
        circuit(4, &[(Or, &[1, 2]), (And, &[3, 4]), (And, &[5, 6]), (Or, &[7, 1])]),
        circuit(3, &[(And, &[1, 2]), (And, &[2, 3]), (And, &[1, 3]), (Or, &[4, 5, 6])]),
        circuit(4, &[(And, &[1, 2]), (And, &[5, 3]), (And, &[6, 4])]),
        circuit(3, &[(Or, &[1, 2]), (Or, &[2, 3]), (And, &[4, 5])]),
        circuit(4, &[(And, &[1, 2]), (Or, &[5, 3]), (And, &[6, 4])]),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reductions::{brute_force_mmcs, brute_force_sat};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn circuit_collection_bounds_and_optima() {
        let cs = hand_built_circuits();
        assert_eq!(cs.len(), 10);
        let opts: Vec<usize> = cs.iter().map(|c| brute_force_mmcs(c).unwrap()).collect();
        assert_eq!(opts, vec![2, 1, 3, 2, 2, 1, 2, 4, 1, 2]);
        for c in &cs {
            assert!(c.size() <= 8 && c.depth() <= 3);
        }
    }

    #[test]
    fn random_instances_are_valid_and_mixed() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut sat = [0usize; 2];
        for _ in 0..60 {
            let f = random_3cnf(&mut rng, 5, 8).unwrap();
            assert!(f.clauses.len() <= 8 && f.num_vars <= 5);
            sat[usize::from(brute_force_sat(&f).unwrap().is_some())] += 1;
            let sc = random_setcover(&mut rng, 6, 6).unwrap();
            let k_star = brute_force_setcover(&sc).unwrap();
            assert!(k_star <= sc.k && sc.k <= sc.subsets.len());
        }
        assert!(sat[0] >= 10 && sat[1] >= 10, "{sat:?}");
    }
}
