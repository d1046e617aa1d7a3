use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use relu_exact::harness::instances::hand_built_circuits;
use relu_exact::harness::parse_synthetic;
use relu_exact::learners::SampleSource;
use relu_exact::model::{SampleSet, Sign};
use relu_exact::oracle::grid_search_train;
use relu_exact::realizable::check_realizable_single;
use relu_exact::reductions::{gen_3sat, gen_mmcs, gen_setcover, CnfFormula, SetCoverInstance};
use relu_exact::subproblem::{solve, sparse, ConstrainedLsq, SolverConfig};
use relu_exact::trainer::{train_exact, TrainOptions};

fn draw(source: &str, m: usize) -> SampleSet {
    parse_synthetic(source).unwrap().draw(m).unwrap()
}

fn exact_trainer(c: &mut Criterion) {
    let mut g = c.benchmark_group("train_exact");
    g.sample_size(10);
    for m in [6, 10, 14] {
        let s = draw("synthetic:noisy:n=2,k=1,seed=3,sigma=0.1", m);
        g.bench_with_input(BenchmarkId::new("noisy_k1_n2", m), &s, |b, s| {
            b.iter(|| train_exact(black_box(s), &TrainOptions::new(1)).unwrap())
        });
    }
    for m in [6, 8] {
        let s = draw("synthetic:noisy:n=1,k=2,seed=5,sigma=0.1", m);
        g.bench_with_input(BenchmarkId::new("noisy_k2_n1", m), &s, |b, s| {
            b.iter(|| train_exact(black_box(s), &TrainOptions::new(2).parallelism(1)).unwrap())
        });
    }
    let s = draw("synthetic:realizable:n=3,k=1,seed=7", 500);
    g.bench_function("realizable_k1_n3_m500", |b| {
        b.iter(|| {
            train_exact(black_box(&s), &TrainOptions::new(1).norm_constrained(true).max_pattern_bits(None)).unwrap()
        })
    });
    g.finish();
}

fn reductions(c: &mut Criterion) {
    let mut g = c.benchmark_group("reductions");
    g.sample_size(10);
    let sc = SetCoverInstance::new(4, vec![vec![1, 2], vec![2, 3], vec![3, 4], vec![1, 4]], 2).unwrap();
    let inst = gen_setcover(&sc, false).unwrap();
    g.bench_function("setcover_n4_m4", |b| b.iter(|| train_exact(&inst.samples, &inst.train_options()).unwrap()));
    let f = CnfFormula::new(3, vec![[1, 2, 3], [-1, 2, -3], [1, -2, 3], [-1, -2, -3]]).unwrap();
    let inst = gen_3sat(&f, false).unwrap();
    g.bench_function("3sat_satisfiable", |b| b.iter(|| train_exact(&inst.samples, &inst.train_options()).unwrap()));
    let inst = gen_mmcs(&hand_built_circuits()[3], false).unwrap();
    g.bench_function("mmcs_circuit_4", |b| b.iter(|| train_exact(&inst.samples, &inst.train_options()).unwrap()));
    g.finish();
}

fn building_blocks(c: &mut Criterion) {
    let mut p = ConstrainedLsq::new(4);
    for i in 0..12 {
        let t = i as f64;
        p.add_residual(sparse(&[t.sin(), t.cos(), 0.3 * t, 1.0]), 0.0, (0.7 * t).sin());
    }
    p.add_inequality(sparse(&[1.0, 1.0, 0.0, 0.0]), -0.5);
    p.add_ball_group(vec![0, 1, 2]);
    c.bench_function("solve_qp_4vars", |b| b.iter(|| solve(black_box(&p), &SolverConfig::default()).unwrap()));

    let s = draw("synthetic:realizable:n=5,k=1,seed=2", 100);
    c.bench_function("realizable_n5_m100", |b| b.iter(|| check_realizable_single(black_box(&s), true).unwrap()));

    let s = draw("synthetic:noisy:n=1,k=1,seed=1,sigma=0.1", 5);
    let mut g = c.benchmark_group("grid");
    g.sample_size(10);
    g.bench_function("k1_n1_step0.05", |b| {
        b.iter(|| grid_search_train(&s, &[Sign::Plus], (-2.0, 2.0), 0.05).unwrap())
    });
    g.finish();
}

criterion_group!(benches, exact_trainer, reductions, building_blocks);
criterion_main!(benches);
