//! The individual checks a suite can run. Every check is a pure function of
//! its parameters and seed, apart from wall-clock limits.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::instances::{hand_built_circuits, random_3cnf, random_setcover};
use super::sources::{Recording, SourceKind, SyntheticSource};
use super::tolerances as tol;
use crate::error::Result;
use crate::learners::{
    generalization_bound, learn_agnostic, learn_reliable, rademacher_bound, LearnerConfig,
    SampleSource,
};
use crate::model::{eval_net, eval_unit, false_positive_rate, squared_loss, ReluNet, SampleSet, Sign};
use crate::oracle::{ball_uniform, grid_search_train};
use crate::realizable::{check_realizable_single, Realizability};
use crate::reductions::{
    brute_force_mmcs, brute_force_sat, brute_force_setcover, gen_3sat, gen_mmcs, gen_setcover,
    height_bound_check, setcover_witness, SetCoverInstance,
};
use crate::subproblem::SolverConfig;
use crate::trainer::{train_exact, TrainOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CheckKind {
    RealizableRoundtrip(RoundtripParams),
    TrainerVsGrid(GridParams),
    SetcoverIdentity(SetcoverParams),
    SatDichotomy(SatParams),
    MmcsIdentity(MmcsParams),
    ReliableMechanics(ReliableParams),
    ScaledLearning(LearningParams),
    BoundFormulas,
    WitnessLoss(WitnessParams),
}

impl CheckKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::RealizableRoundtrip(_) => "realizable-roundtrip",
            Self::TrainerVsGrid(_) => "trainer-vs-grid",
            Self::SetcoverIdentity(_) => "setcover-identity",
            Self::SatDichotomy(_) => "sat-dichotomy",
            Self::MmcsIdentity(_) => "mmcs-identity",
            Self::ReliableMechanics(_) => "reliable-mechanics",
            Self::ScaledLearning(_) => "scaled-learning",
            Self::BoundFormulas => "bound-formulas",
            Self::WitnessLoss(_) => "witness-loss",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RoundtripParams {
    pub instances: usize,
    pub max_dim: usize,
    pub max_samples: usize,
}

impl Default for RoundtripParams {
    fn default() -> Self {
        Self {
            instances: 100,
            max_dim: 10,
            max_samples: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridParams {
    pub instances: usize,
    pub max_samples: usize,
    pub beta: f64,
    pub step: f64,
    pub bound: f64,
}

impl Default for GridParams {
    fn default() -> Self {
        Self {
            instances: 50,
            max_samples: 5,
            beta: 1e-8,
            step: 0.05,
            bound: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SetcoverParams {
    pub instances: usize,
    pub max_universe: usize,
    pub max_sets: usize,
    pub beta: f64,
}

impl Default for SetcoverParams {
    fn default() -> Self {
        Self {
            instances: 20,
            max_universe: 6,
            max_sets: 6,
            beta: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SatParams {
    pub instances: usize,
    pub max_vars: usize,
    pub max_clauses: usize,
}

impl Default for SatParams {
    fn default() -> Self {
        Self {
            instances: 20,
            max_vars: 5,
            max_clauses: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MmcsParams {
    /// How many of the hand-built circuits to use (at most 10).
    pub circuits: usize,
    pub beta: f64,
}

impl Default for MmcsParams {
    fn default() -> Self {
        Self {
            circuits: 10,
            beta: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReliableParams {
    pub ks: Vec<usize>,
    pub runs_per_k: usize,
    pub dim: usize,
    pub epsilon: f64,
    pub delta: f64,
    /// `constant_scale = base_scale / k⁶`, which keeps the sample count the
    /// same for every `k`.
    pub base_scale: f64,
    pub probe_points: usize,
}

impl Default for ReliableParams {
    fn default() -> Self {
        Self {
            ks: vec![1, 2],
            runs_per_k: 2,
            dim: 2,
            epsilon: 0.5,
            delta: 0.1,
            base_scale: 1e-9,
            probe_points: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningParams {
    pub runs: usize,
    pub required: usize,
    pub dim: usize,
    pub k: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub constant_scale: f64,
    pub held_out: usize,
}

impl Default for LearningParams {
    fn default() -> Self {
        Self {
            runs: 5,
            required: 4,
            dim: 3,
            k: 1,
            epsilon: 0.1,
            delta: 0.1,
            constant_scale: 1e-9,
            held_out: 10_000,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WitnessParams {
    pub instances: usize,
    /// Perturb each witness before measuring it (a negative control that
    /// must fail).
    pub corrupt: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub id: String,
    pub kind: String,
    pub seed: u64,
    pub passed: bool,
    pub summary: String,
    pub details: Value,
}

/// Result of a check body: pass flag, one-line summary, details.
type Verdict = (bool, String, Value);

pub fn run_check(id: &str, kind: &CheckKind, seed: u64) -> CheckOutcome {
    let verdict = match kind {
        CheckKind::RealizableRoundtrip(p) => realizable_roundtrip(p, seed),
        CheckKind::TrainerVsGrid(p) => trainer_vs_grid(p, seed),
        CheckKind::SetcoverIdentity(p) => setcover_identity(p, seed),
        CheckKind::SatDichotomy(p) => sat_dichotomy(p, seed),
        CheckKind::MmcsIdentity(p) => mmcs_identity(p),
        CheckKind::ReliableMechanics(p) => reliable_mechanics(p, seed),
        CheckKind::ScaledLearning(p) => scaled_learning(p, seed),
        CheckKind::BoundFormulas => Ok(bound_formulas()),
        CheckKind::WitnessLoss(p) => witness_loss(p, seed),
    };
    let (passed, summary, details) =
        verdict.unwrap_or_else(|e| (false, format!("error: {e}"), Value::Null));
    CheckOutcome {
        id: id.to_string(),
        kind: kind.name().to_string(),
        seed,
        passed,
        summary,
        details,
    }
}

fn realizable_roundtrip(p: &RoundtripParams, seed: u64) -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fit_failures = Vec::new();
    let mut perturbed_accepted = Vec::new();
    let mut slow = Vec::new();
    let mut worst: f64 = 0.0;
    for i in 0..p.instances {
        let n = rng.random_range(1..=p.max_dim);
        let m = rng.random_range(1..=p.max_samples);
        let w: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let b: f64 = rng.sample(StandardNormal);
        let points: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..n).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let labels: Vec<f64> = points.iter().map(|x| eval_unit(&w, b, x)).collect::<Result<_>>()?;
        let s = SampleSet::with_dim(n, points.clone(), labels.clone())?;

        let t = Instant::now();
        let fit = check_realizable_single(&s, true);
        if t.elapsed() > tol::REALIZABLE_TIME {
            slow.push(i);
        }
        match fit {
            Ok(Realizability::Fit { weights, bias }) => {
                for (x, y) in s.iter() {
                    worst = worst.max((eval_unit(&weights, bias, x)? - y).abs());
                }
            }
            _ => fit_failures.push(i),
        }

        let mut bad = labels;
        let j = rng.random_range(0..m);
        bad[j] = -1.0;
        let s_bad = SampleSet::with_dim(n, points, bad)?;
        let t = Instant::now();
        let verdict = check_realizable_single(&s_bad, true);
        if t.elapsed() > tol::REALIZABLE_TIME {
            slow.push(i);
        }
        if !matches!(verdict, Ok(Realizability::NotRealizable)) {
            perturbed_accepted.push(i);
        }
    }
    let passed = fit_failures.is_empty()
        && perturbed_accepted.is_empty()
        && slow.is_empty()
        && worst <= tol::REALIZABLE_RESIDUAL;
    let summary = format!(
        "{} of {} fits, max residual {worst:.3e}; {} of {} perturbed sets rejected",
        p.instances - fit_failures.len(),
        p.instances,
        p.instances - perturbed_accepted.len(),
        p.instances
    );
    let details = json!({
        "instances": p.instances,
        "max_residual": worst,
        "fit_failures": fit_failures,
        "perturbed_accepted": perturbed_accepted,
        "over_time_limit": slow,
    });
    Ok((passed, summary, details))
}

fn trainer_vs_grid(p: &GridParams, seed: u64) -> Result<Verdict> {
    // Shapes (k, n) with k(n+1) ≤ 4, the largest grids under the point limit.
    const SHAPES: [(usize, usize); 3] = [(1, 1), (1, 2), (2, 1)];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = Instant::now();
    let mut rows = Vec::new();
    let mut worst_gap = f64::NEG_INFINITY;
    let mut violations = Vec::new();
    for i in 0..p.instances {
        let (k, n) = SHAPES[rng.random_range(0..SHAPES.len())];
        let m = rng.random_range(1..=p.max_samples);
        let alphas: Vec<Sign> = (0..k)
            .map(|_| if rng.random_bool(0.5) { Sign::Plus } else { Sign::Minus })
            .collect();
        let truth = ReluNet::new(
            alphas.clone(),
            (0..k).map(|_| (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).collect(),
            (0..k).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )?;
        let points: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let labels: Vec<f64> = points
            .iter()
            .map(|x| Ok(eval_net(&truth, x)? + rng.random_range(-0.5..0.5)))
            .collect::<Result<_>>()?;
        let s = SampleSet::with_dim(n, points, labels)?;
        let opts = TrainOptions::new(k)
            .with_alphas(alphas.clone())
            .solver(SolverConfig::with_beta(p.beta));
        let trained = train_exact(&s, &opts)?;
        let grid = grid_search_train(&s, &alphas, (-p.bound, p.bound), p.step)?;
        let gap = trained.error - grid.error;
        worst_gap = worst_gap.max(gap);
        if gap > tol::GRID_SLACK {
            violations.push(i);
        }
        rows.push(json!({
            "k": k, "n": n, "m": m,
            "trainer_error": trained.error,
            "grid_error": grid.error,
        }));
    }
    let over_time = start.elapsed() > tol::GRID_TOTAL_TIME;
    let passed = violations.is_empty() && !over_time;
    let summary = format!(
        "{} of {} instances within {:e} of the grid, worst excess {worst_gap:.3e}{}",
        p.instances - violations.len(),
        p.instances,
        tol::GRID_SLACK,
        if over_time { ", over the time limit" } else { "" }
    );
    Ok((passed, summary, json!({ "instances": rows, "violations": violations, "worst_excess": worst_gap })))
}

/// First cover of minimum size, by increasing size then index order.
fn minimum_cover(sc: &SetCoverInstance, size: usize) -> Option<Vec<usize>> {
    let m = sc.subsets.len();
    (0u64..1 << m)
        .filter(|mask| mask.count_ones() as usize == size)
        .map(|mask| (0..m).filter(|j| mask >> j & 1 == 1).collect::<Vec<_>>())
        .find(|c| sc.covers(c))
}

fn setcover_identity(p: &SetcoverParams, seed: u64) -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let limit = tol::REDUCTION_ABS + p.beta;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut worst_rel: f64 = 0.0;
    for i in 0..p.instances {
        let sc = random_setcover(&mut rng, p.max_universe, p.max_sets)?;
        let k_star = brute_force_setcover(&sc)?;
        let cover = minimum_cover(&sc, k_star).expect("a cover of the optimal size exists");
        let eps = sc.epsilon();
        let predicted = eps * eps * k_star as f64;
        let mut errors = Vec::new();
        let mut ok = true;
        for bias in [false, true] {
            let inst = gen_setcover(&sc, bias)?;
            let r = train_exact(&inst.samples, &inst.train_options().solver(SolverConfig::with_beta(p.beta)))?;
            ok &= (r.error - predicted).abs() <= limit;
            worst_rel = worst_rel.max((r.error - predicted).abs() / predicted);
            errors.push(r.error);
        }
        let inst = gen_setcover(&sc, false)?;
        let witness = squared_loss(&setcover_witness(&sc, &cover)?, &inst.samples)?;
        ok &= (witness - eps * eps * cover.len() as f64).abs() <= tol::WITNESS_ABS;
        if !ok {
            failures.push(i);
        }
        rows.push(json!({
            "universe": sc.universe_size,
            "subsets": sc.subsets.len(),
            "k": sc.k,
            "k_star": k_star,
            "predicted": predicted,
            "error": errors[0],
            "error_with_bias": errors[1],
            "witness_loss": witness,
        }));
    }
    let summary = format!(
        "{} of {} instances match eps^2 k* within {limit:.3e} (worst relative deviation {worst_rel:.2e})",
        p.instances - failures.len(),
        p.instances
    );
    Ok((failures.is_empty(), summary, json!({ "instances": rows, "failures": failures })))
}

fn sat_dichotomy(p: &SatParams, seed: u64) -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut satisfiable_count = 0;
    for i in 0..p.instances {
        let f = random_3cnf(&mut rng, p.max_vars, p.max_clauses)?;
        let sat = brute_force_sat(&f)?.is_some();
        satisfiable_count += usize::from(sat);
        let mut ok = true;
        let mut errors = Vec::new();
        let mut max_bias: f64 = 0.0;
        for bias in [false, true] {
            let inst = gen_3sat(&f, bias)?;
            let r = train_exact(&inst.samples, &inst.train_options())?;
            let zero = r.error <= tol::SAT_ZERO;
            ok &= zero == sat;
            if bias && zero {
                max_bias = r.net.biases().iter().fold(0.0, |a, b| a.max(b.abs()));
                ok &= max_bias <= tol::BIAS_ZERO;
            }
            errors.push(r.error);
        }
        if !ok {
            failures.push(i);
        }
        rows.push(json!({
            "vars": f.num_vars,
            "clauses": f.clauses,
            "satisfiable": sat,
            "error": errors[0],
            "error_with_bias": errors[1],
            "max_abs_bias": max_bias,
        }));
    }
    let summary = format!(
        "{} of {} formulas ({} satisfiable) follow the zero-error dichotomy",
        p.instances - failures.len(),
        p.instances,
        satisfiable_count
    );
    Ok((failures.is_empty(), summary, json!({ "instances": rows, "failures": failures })))
}

fn mmcs_identity(p: &MmcsParams) -> Result<Verdict> {
    let limit = tol::REDUCTION_ABS + p.beta;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let circuits = hand_built_circuits();
    let count = p.circuits.min(circuits.len());
    for (i, c) in circuits.iter().take(count).enumerate() {
        let opt = brute_force_mmcs(c)?;
        let eps = c.epsilon();
        let predicted = opt as f64 * eps * eps;
        let mut ok = true;
        let mut errors = Vec::new();
        let mut violations = 0;
        for bias in [false, true] {
            let inst = gen_mmcs(c, bias)?;
            let r = train_exact(&inst.samples, &inst.train_options().solver(SolverConfig::with_beta(p.beta)))?;
            ok &= (r.error - predicted).abs() <= limit;
            let report = height_bound_check(c, &r.net, r.error)?;
            violations += report.violations.len();
            errors.push(r.error);
        }
        ok &= violations == 0;
        if !ok {
            failures.push(i);
        }
        rows.push(json!({
            "wires": c.size(),
            "depth": c.depth(),
            "opt": opt,
            "predicted": predicted,
            "error": errors[0],
            "error_with_bias": errors[1],
            "height_violations": violations,
        }));
    }
    let summary = format!(
        "{} of {count} circuits match opt eps^2 within {limit:.3e} with clean height bounds",
        count - failures.len()
    );
    Ok((failures.is_empty(), summary, json!({ "circuits": rows, "failures": failures })))
}

fn reliable_mechanics(p: &ReliableParams, seed: u64) -> Result<Verdict> {
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut run = 0u64;
    for &k in &p.ks {
        for _ in 0..p.runs_per_k {
            let run_seed = seed.wrapping_add(run);
            run += 1;
            let truth = SyntheticSource::random_truth(p.dim, k, run_seed ^ 0x7275_7468)?;
            let mut src = SyntheticSource::new(SourceKind::Realizable, truth, run_seed)?;
            let mut rec = Recording::new(&mut src);
            let cfg = LearnerConfig::new(k, p.epsilon, p.delta)
                .constant_scale(p.base_scale / (k as f64).powi(6));
            let out = learn_reliable(&mut rec, &cfg)?;
            let train = &rec.drawn[0];
            let fpr = false_positive_rate(&out.net, train)?;
            let gamma = out.gamma.expect("reliable outcome carries gamma");
            let before = out.unshifted.as_ref().expect("reliable outcome carries the unshifted net");
            let mut probe_rng = ChaCha8Rng::seed_from_u64(run_seed ^ 0x7072_6f62);
            let mut sup: f64 = 0.0;
            for _ in 0..p.probe_points {
                let x = ball_uniform(&mut probe_rng, p.dim);
                sup = sup.max((eval_net(before, &x)? - eval_net(&out.net, &x)?).abs());
            }
            let bound = k as f64 * gamma;
            let ok = fpr == 0.0
                && sup <= bound * (1.0 + tol::SHIFT_FLOAT_SLACK)
                && out.net.is_normalized();
            if !ok {
                failures.push(rows.len());
            }
            rows.push(json!({
                "k": k,
                "samples": out.samples_used,
                "training_false_positive_rate": fpr,
                "gamma": gamma,
                "sup_shift": sup,
                "shift_bound": bound,
            }));
        }
    }
    let summary = format!(
        "{} of {} reliable runs have zero training false positives and shift within k*gamma",
        rows.len() - failures.len(),
        rows.len()
    );
    Ok((failures.is_empty(), summary, json!({ "runs": rows, "failures": failures })))
}

fn scaled_learning(p: &LearningParams, seed: u64) -> Result<Verdict> {
    let mut rows = Vec::new();
    let mut good = 0;
    let mut over_time = false;
    for r in 0..p.runs as u64 {
        let run_seed = seed.wrapping_add(r);
        let truth = SyntheticSource::random_truth(p.dim, p.k, run_seed ^ 0x7275_7468)?;
        let mut src = SyntheticSource::new(SourceKind::Realizable, truth, run_seed)?;
        let cfg = LearnerConfig::new(p.k, p.epsilon, p.delta).constant_scale(p.constant_scale);
        let t = Instant::now();
        let out = learn_agnostic(&mut src, &cfg)?;
        let slow = t.elapsed() > tol::LEARNING_TIME;
        over_time |= slow;
        let test = src.draw(p.held_out)?;
        let held_out = squared_loss(&out.net, &test)? / test.m() as f64;
        let ok = held_out <= p.epsilon && !slow;
        good += usize::from(ok);
        rows.push(json!({
            "samples": out.samples_used,
            "training_loss": out.training_loss,
            "held_out_loss": held_out,
            "generalization_bound": out.generalization_bound,
        }));
    }
    let passed = good >= p.required && !over_time;
    let summary = format!(
        "{good} of {} runs reach held-out loss <= {} (need {})",
        p.runs, p.epsilon, p.required
    );
    Ok((passed, summary, json!({ "runs": rows })))
}

/// Values worked out by hand (see the comments) for fixed inputs.
fn bound_formulas() -> Verdict {
    let e = std::f64::consts::E;
    let cases: [(&str, f64, f64); 4] = [
        ("rademacher(1,4)", rademacher_bound(1, 4), 1.0),
        // 16 · 0.002 + 8 · 0.001
        ("gen(1,1e6,1/e,4,4)", generalization_bound(1, 1_000_000, 1.0 / e, 4.0, 4.0), 0.04),
        // 32 · 0.4 + 32 · √(ln 20 / 100)
        ("gen(2,100,0.05,8,16)", generalization_bound(2, 100, 0.05, 8.0, 16.0), 18.338618824327312),
        // 6 · 6/√50 + 5 · √(ln 5 / 50)
        ("gen(3,50,0.2,1.5,2.5)", generalization_bound(3, 50, 0.2, 1.5, 2.5), 5.988230113540193),
    ];
    let mut rows = Vec::new();
    let mut passed = true;
    for (name, got, want) in cases {
        passed &= (got - want).abs() <= tol::BOUND_FORMULA;
        rows.push(json!({ "case": name, "value": got, "expected": want }));
    }
    let summary = format!("{} bound formula cases checked", rows.len());
    (passed, summary, json!({ "cases": rows }))
}

fn witness_loss(p: &WitnessParams, seed: u64) -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let instances = p.instances.max(1);
    let mut failures = Vec::new();
    let mut rows = Vec::new();
    for i in 0..instances {
        let sc = random_setcover(&mut rng, 6, 6)?;
        let k_star = brute_force_setcover(&sc)?;
        let cover = minimum_cover(&sc, k_star).expect("a cover of the optimal size exists");
        let mut net = setcover_witness(&sc, &cover)?;
        if p.corrupt {
            net.weights_mut()[0][sc.subsets.len()] = 0.5;
        }
        let inst = gen_setcover(&sc, false)?;
        let loss = squared_loss(&net, &inst.samples)?;
        let eps = sc.epsilon();
        let want = eps * eps * cover.len() as f64;
        if (loss - want).abs() > tol::WITNESS_ABS {
            failures.push(i);
        }
        rows.push(json!({ "cover": cover, "loss": loss, "expected": want }));
    }
    let summary = format!(
        "{} of {instances} witnesses{} reach loss eps^2 |cover|",
        instances - failures.len(),
        if p.corrupt { " (corrupted)" } else { "" }
    );
    Ok((failures.is_empty(), summary, json!({ "witnesses": rows, "failures": failures })))
}
