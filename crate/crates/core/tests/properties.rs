use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use relu_exact::learners::shift_biases;
use relu_exact::model::{eval_net, squared_loss, ReluNet, SampleSet, Sign};
use relu_exact::oracle::grid_search_train;
use relu_exact::realizable::check_realizable_single;
use relu_exact::reductions::{gen_3sat, gen_mmcs, gen_setcover, CnfFormula, ReductionInstance, SetCoverInstance};
use relu_exact::harness::instances::hand_built_circuits;
use relu_exact::subproblem::{solve, sparse, ConstrainedLsq, SolverConfig};
use relu_exact::trainer::{train_exact, TrainOptions};

fn sign(plus: bool) -> Sign {
    if plus {
        Sign::Plus
    } else {
        Sign::Minus
    }
}

/// Up to 5 samples in up to 2 dimensions with labels in [−1, 2].
fn tiny_set() -> impl Strategy<Value = SampleSet> {
    (1usize..=2, 1usize..=5).prop_flat_map(|(n, m)| {
        (
            prop::collection::vec(prop::collection::vec(-1.0f64..1.0, n), m),
            prop::collection::vec(-1.0f64..2.0, m),
        )
            .prop_map(move |(p, l)| SampleSet::with_dim(n, p, l).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn trained_error_dominates_random_candidates(
        s in tiny_set(),
        signs in prop::collection::vec(any::<bool>(), 1..=2),
        seed in any::<u64>(),
    ) {
        let alphas: Vec<Sign> = signs.into_iter().map(sign).collect();
        let beta = 1e-8;
        let r = train_exact(&s, &TrainOptions::new(alphas.len()).with_alphas(alphas.clone())).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..1000 {
            let weights = (0..alphas.len())
                .map(|_| (0..s.n()).map(|_| rng.random_range(-3.0..3.0)).collect())
                .collect();
            let biases = (0..alphas.len()).map(|_| rng.random_range(-3.0..3.0)).collect();
            let cand = ReluNet::new(alphas.clone(), weights, biases).unwrap();
            prop_assert!(r.error <= squared_loss(&cand, &s).unwrap() + beta);
        }
        prop_assert!((squared_loss(&r.net, &s).unwrap() - r.error).abs() <= 1e-9 * (1.0 + r.error));
    }

    #[test]
    fn reliability_never_lowers_the_optimum(
        s in tiny_set(),
        zeros in prop::collection::vec(any::<bool>(), 5),
        k in 1usize..=2,
    ) {
        let labels: Vec<f64> = s.labels().iter().zip(&zeros).map(|(y, z)| if *z { 0.0 } else { y.abs() }).collect();
        let s = SampleSet::with_dim(s.n(), s.points().to_vec(), labels).unwrap();
        let plain = train_exact(&s, &TrainOptions::new(k)).unwrap();
        let reliable = train_exact(&s, &TrainOptions::new(k).reliable(true)).unwrap();
        prop_assert!(reliable.error >= plain.error - 1e-8);
        for (x, y) in s.iter() {
            if y == 0.0 {
                prop_assert_eq!(eval_net(&reliable.net, x).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn realizable_check_agrees_with_trainer(
        w in prop::collection::vec(-1.0f64..1.0, 2),
        b in -0.5f64..0.5,
        points in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 2), 1..=5),
        flip in prop::option::of(0usize..5),
    ) {
        let mut labels: Vec<f64> = points
            .iter()
            .map(|x| (w[0] * x[0] + w[1] * x[1] + b).max(0.0))
            .collect();
        if let Some(i) = flip {
            let i = i % labels.len();
            labels[i] = -1.0;
        }
        let s = SampleSet::with_dim(2, points, labels).unwrap();
        let fits = check_realizable_single(&s, true).unwrap().is_realizable();
        let r = train_exact(&s, &TrainOptions::new(1)).unwrap();
        prop_assert_eq!(fits, r.error <= 1e-6);
    }

    #[test]
    fn shifted_units_below_gamma_output_zero(
        weights in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 2), 1..=3),
        biases in prop::collection::vec(-1.0f64..1.0, 3),
        x in prop::collection::vec(-0.7f64..0.7, 2),
        gamma in 0.0f64..0.5,
    ) {
        let k = weights.len();
        let net = ReluNet::new(vec![Sign::Plus; k], weights, biases[..k].to_vec()).unwrap();
        let shifted = shift_biases(&net, gamma);
        if (0..k).all(|j| net.affine(j, &x) <= gamma) {
            prop_assert_eq!(eval_net(&shifted, &x).unwrap(), 0.0);
        }
        prop_assert!(eval_net(&shifted, &x).unwrap() <= eval_net(&net, &x).unwrap());
    }

    #[test]
    fn nested_grids_never_get_worse(s in tiny_set().prop_filter("one dimension", |s| s.n() == 1)) {
        let mut last = f64::INFINITY;
        for step in [1.0, 0.5, 0.25, 0.125] {
            let e = grid_search_train(&s, &[Sign::Plus], (-2.0, 2.0), step).unwrap().error;
            prop_assert!(e <= last);
            last = e;
        }
        let exact = train_exact(&s, &TrainOptions::new(1)).unwrap().error;
        prop_assert!(exact <= last + 1e-8);
    }
}

/// Random least squares over a box, a ball group and a few halfspaces that
/// the origin satisfies.
fn random_problem(rng: &mut ChaCha8Rng) -> ConstrainedLsq {
    let n = rng.random_range(1..=4);
    let mut p = ConstrainedLsq::new(n);
    for _ in 0..rng.random_range(1..=6) {
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        p.add_residual(sparse(&c), 0.0, rng.random_range(-3.0..3.0));
    }
    for _ in 0..rng.random_range(0..=3) {
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        p.add_inequality(sparse(&c), -rng.random_range(0.0..0.5));
    }
    if n >= 2 {
        p.add_ball_group(vec![0, 1]);
    }
    p.add_box(n - 1, -0.5, 0.5);
    p
}

fn project(p: &ConstrainedLsq, v: &mut [f64]) {
    for g in &p.ball_groups {
        let norm = g.iter().map(|&i| v[i] * v[i]).sum::<f64>().sqrt();
        if norm > 1.0 {
            g.iter().for_each(|&i| v[i] /= norm);
        }
    }
    for b in &p.box_vars {
        v[b.var] = v[b.var].clamp(b.lo, b.hi);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn solver_certificate_holds(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_problem(&mut rng);
        let cfg = SolverConfig::default();
        let sol = solve(&p, &cfg).unwrap();
        prop_assert!(p.max_violation(&sol.x) <= cfg.feasibility_tol);
        let direct = p.objective(&sol.x);
        prop_assert!((sol.value - direct).abs() <= 1e-10 * direct.abs().max(1e-300) + 1e-300);
        prop_assert!(sol.lower_bound <= sol.value && sol.value - sol.lower_bound <= cfg.beta);
        prop_assert_eq!(&solve(&p, &cfg).unwrap(), &sol);
        let mut checked = 0;
        for _ in 0..1000 {
            let mut v: Vec<f64> = sol.x.iter().map(|x| x + 1e-4 * rng.random_range(-1.0..1.0)).collect();
            project(&p, &mut v);
            if p.inequalities.iter().any(|q| q.value(&v) > 0.0) {
                continue;
            }
            checked += 1;
            prop_assert!(sol.value <= p.objective(&v) + cfg.beta + 1e-6);
        }
        prop_assert!(checked > 0);
    }
}

fn round_trips(inst: &ReductionInstance) {
    let parsed = ReductionInstance::from_json(&inst.to_json().unwrap()).unwrap();
    assert_eq!(&parsed, inst);
    let again = parsed.regenerate().unwrap();
    assert_eq!(again.samples, inst.samples);
    for (a, b) in again.samples.points().iter().flatten().zip(inst.samples.points().iter().flatten()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn reduction_instances_round_trip(
        subsets in prop::collection::vec(prop::collection::btree_set(1usize..=5, 1..=3), 1..=4),
        clauses in prop::collection::vec(prop::array::uniform3(prop_oneof![-4i64..=-1, 1i64..=4]), 1..=6),
        circuit in 0usize..10,
        bias in any::<bool>(),
    ) {
        let subsets: Vec<Vec<usize>> = subsets.into_iter().map(|s| s.into_iter().collect()).collect();
        let universe = subsets.iter().flatten().copied().max().unwrap();
        let mut subsets = subsets;
        for e in 1..=universe {
            if !subsets.iter().any(|s| s.contains(&e)) {
                subsets[0].push(e);
                subsets[0].sort_unstable();
            }
        }
        let k = subsets.len();
        round_trips(&gen_setcover(&SetCoverInstance::new(universe, subsets, k).unwrap(), bias).unwrap());
        round_trips(&gen_3sat(&CnfFormula::new(4, clauses).unwrap(), bias).unwrap());
        round_trips(&gen_mmcs(&hand_built_circuits()[circuit], bias).unwrap());
    }
}
