//! Proper agnostic and reliable learners for sums of ReLUs over the unit
//! ball, and the Rademacher-style bounds used to analyze them.
//!
//! Sample counts carry a `10¹⁰` constant; `constant_scale` multiplies it so
//! that desk-scale runs are possible. Logarithms are natural.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{squared_loss, ReluNet, SampleSet};
use crate::subproblem::SolverConfig;
use crate::trainer::{train_exact, TrainOptions};

const SAMPLE_CONSTANT: f64 = 1e10;

/// Pull-based stream of i.i.d. labeled samples with `‖x‖ ≤ 1`.
pub trait SampleSource {
    fn dim(&self) -> usize;
    fn draw(&mut self, m: usize) -> Result<SampleSet>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub k: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub constant_scale: f64,
    pub solver: SolverConfig,
    /// Worker threads for the embedded trainer (0 = global pool).
    pub parallelism: usize,
}

impl LearnerConfig {
    /// Solver accuracy defaults to `ε / 100`.
    pub fn new(k: usize, epsilon: f64, delta: f64) -> Self {
        Self {
            k,
            epsilon,
            delta,
            constant_scale: 1.0,
            solver: SolverConfig::with_beta(epsilon / 100.0),
            parallelism: 0,
        }
    }

    pub fn constant_scale(mut self, scale: f64) -> Self {
        self.constant_scale = scale;
        self
    }

    pub fn solver(mut self, solver: SolverConfig) -> Self {
        self.solver = solver;
        self
    }

    pub fn parallelism(mut self, workers: usize) -> Self {
        self.parallelism = workers;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(invalid(format!("epsilon must lie in (0,1], got {}", self.epsilon)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid(format!("delta must lie in (0,1), got {}", self.delta)));
        }
        if !(self.constant_scale > 0.0 && self.constant_scale.is_finite()) {
            return Err(invalid(format!(
                "constant_scale must be positive, got {}",
                self.constant_scale
            )));
        }
        self.solver.validate()
    }

    /// `γ = ε / (12k²)`, the bias shift of the reliable learner.
    pub fn gamma(&self) -> f64 {
        self.epsilon / (12.0 * (self.k * self.k) as f64)
    }

    fn train_options(&self, reliable: bool) -> TrainOptions {
        TrainOptions::new(self.k)
            .norm_constrained(true)
            .reliable(reliable)
            .solver(self.solver)
            .parallelism(self.parallelism)
            .max_pattern_bits(None)
    }
}

/// `⌈x⌉`, ignoring float noise just above an integer.
fn ceil_count(x: f64) -> Result<u64> {
    if !x.is_finite() || x > u64::MAX as f64 {
        return Err(invalid(format!("sample count {x:e} is not representable")));
    }
    let r = x.round();
    let c = if (x - r).abs() <= 1e-9 * r.max(1.0) { r } else { x.ceil() };
    Ok(c.max(1.0) as u64)
}

/// `⌈scale · 10¹⁰ · k⁴ · (1 + ln(1/δ)) / ε²⌉`.
pub fn sample_count_agnostic(cfg: &LearnerConfig) -> Result<u64> {
    cfg.validate()?;
    let k = cfg.k as f64;
    ceil_count(
        cfg.constant_scale * SAMPLE_CONSTANT * k.powi(4) * (1.0 + (1.0 / cfg.delta).ln())
            / (cfg.epsilon * cfg.epsilon),
    )
}

/// `⌈scale · 10¹⁰ · k⁶ · ln(2/δ) / ε⁴⌉`.
pub fn sample_count_reliable(cfg: &LearnerConfig) -> Result<u64> {
    cfg.validate()?;
    let k = cfg.k as f64;
    ceil_count(
        cfg.constant_scale * SAMPLE_CONSTANT * k.powi(6) * (2.0 / cfg.delta).ln()
            / cfg.epsilon.powi(4),
    )
}

/// `2k / √m`.
pub fn rademacher_bound(k: usize, m: u64) -> f64 {
    2.0 * k as f64 / (m as f64).sqrt()
}

/// `4L · 2k/√m + 2b · √(ln(1/δ) / m)`.
pub fn generalization_bound(k: usize, m: u64, delta: f64, lipschitz: f64, bound: f64) -> f64 {
    4.0 * lipschitz * rademacher_bound(k, m) + 2.0 * bound * ((1.0 / delta).ln() / m as f64).sqrt()
}

/// Generalization bound for squared loss on outputs in `[0, 2k]`: the loss is
/// `4k`-Lipschitz and `4k²`-bounded there.
pub fn squared_loss_bound(k: usize, m: u64, delta: f64) -> f64 {
    let kf = k as f64;
    generalization_bound(k, m, delta, 4.0 * kf, 4.0 * kf * kf)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnOutcome {
    pub net: ReluNet,
    pub samples_used: u64,
    /// Mean squared loss of `net` on the training sample.
    pub training_loss: f64,
    pub rademacher_bound: f64,
    pub generalization_bound: f64,
    /// Reliable learner only: the trained net before the bias shift, and γ.
    pub unshifted: Option<ReluNet>,
    pub gamma: Option<f64>,
}

fn draw(source: &mut dyn SampleSource, m: u64) -> Result<SampleSet> {
    let m = usize::try_from(m).map_err(|_| invalid(format!("cannot draw {m} samples")))?;
    let s = source.draw(m)?;
    if s.m() != m {
        return Err(invalid(format!("source returned {} samples, {m} requested", s.m())));
    }
    Ok(s)
}

fn mean_loss(net: &ReluNet, s: &SampleSet) -> Result<f64> {
    Ok(squared_loss(net, s)? / s.m() as f64)
}

/// Empirical risk minimizer over norm-bounded nets with `k` positive units.
pub fn learn_agnostic(source: &mut dyn SampleSource, cfg: &LearnerConfig) -> Result<LearnOutcome> {
    let m = sample_count_agnostic(cfg)?;
    let s = draw(source, m)?;
    let r = train_exact(&s, &cfg.train_options(false))?;
    Ok(LearnOutcome {
        training_loss: mean_loss(&r.net, &s)?,
        net: r.net,
        samples_used: m,
        rademacher_bound: rademacher_bound(cfg.k, m),
        generalization_bound: squared_loss_bound(cfg.k, m, cfg.delta),
        unshifted: None,
        gamma: None,
    })
}

/// Lowers every bias by `γ`, clamped at `−1`.
pub fn shift_biases(net: &ReluNet, gamma: f64) -> ReluNet {
    let mut out = net.clone();
    for b in out.biases_mut() {
        *b = (*b - gamma).max(-1.0);
    }
    out
}

/// Reliable ERM (no positive output on any zero-labeled training point),
/// followed by the bias shift `b′ⱼ = max(−1, bⱼ − γ)`.
pub fn learn_reliable(source: &mut dyn SampleSource, cfg: &LearnerConfig) -> Result<LearnOutcome> {
    let m = sample_count_reliable(cfg)?;
    let s = draw(source, m)?;
    let r = train_exact(&s, &cfg.train_options(true))?;
    let gamma = cfg.gamma();
    let net = shift_biases(&r.net, gamma);
    Ok(LearnOutcome {
        training_loss: mean_loss(&net, &s)?,
        net,
        samples_used: m,
        rademacher_bound: rademacher_bound(cfg.k, m),
        generalization_bound: squared_loss_bound(cfg.k, m, cfg.delta),
        unshifted: Some(r.net),
        gamma: Some(gamma),
    })
}
