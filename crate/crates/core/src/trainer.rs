//! Globally optimal training by activation-pattern enumeration.
//!
//! Fixing, for every unit and sample, whether the unit is active turns the
//! squared training error into a convex problem (see [`pattern_constraints`]).
//! [`train_exact`] enumerates those patterns depth first, one distinct sample
//! point at a time, and keeps the best pattern optimum.
//!
//! The enumeration is exhaustive up to safe pruning. Every node of the
//! search tree (a prefix of the pattern) is solved with the not-yet-assigned
//! points relaxed (for all-positive coefficients the output at such a point
//! is only bounded below by `max(0, Σ_{j∈T} aⱼ)`), which gives a certified
//! lower bound for every completion. A subtree is cut when that bound is
//! within `β/2` of the best error found so far, and convex solves are run to
//! accuracy `β/2`, so the result is within `β` of the global minimum. Identical points share their pattern bits, and
//! units with equal coefficients are interchangeable, so only patterns whose
//! rows are sorted within each coefficient class are visited.
//!
//! Enumeration order is lexicographic in the sample-major bit string
//! (inactive before active). Nodes are taken off the depth-first stack in
//! fixed-size rounds and solved in parallel; results are applied in stack
//! order, so the search, and the returned `(error, pattern)` minimum, do not
//! depend on the worker count.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{squared_loss, ActivationPattern, ReluNet, SampleSet, Sign};
use crate::subproblem::{polish, solve_unchecked, ConstrainedLsq, LinearForm, Solution, SolverConfig};

/// Nodes evaluated per synchronous round. Pruning decisions only see the
/// incumbent as of the start of a round, so this (not the worker count)
/// fixes the search trajectory.
const BATCH: usize = 16;

/// Accuracy used to re-solve a leaf whose solve missed its certificate.
const LEAF_RETRY_BETA: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alphas {
    Fixed(Vec<Sign>),
    Unknown,
}

/// Whether unit biases are trainable or pinned at zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasMode {
    #[default]
    Free,
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub k: usize,
    pub alphas: Alphas,
    /// Restrict to `‖wʲ‖ ≤ 1` and `bⱼ ∈ [-1, 1]`.
    pub norm_constrained: bool,
    /// Force zero output on every sample labeled 0.
    pub reliable: bool,
    pub bias: BiasMode,
    pub solver: SolverConfig,
    /// Worker threads; 0 uses the rayon default.
    pub parallelism: usize,
    /// Refuse to start when `k · (branching points)` (plus `k` for unknown
    /// coefficients) exceeds this. `None` disables the guard.
    pub max_pattern_bits: Option<usize>,
    /// Random restarts for the local-search incumbent.
    pub heuristic_starts: usize,
}

impl TrainOptions {
    pub const DEFAULT_MAX_PATTERN_BITS: usize = 30;

    /// `k` units, all coefficients `+1`, unconstrained, free biases.
    pub fn new(k: usize) -> Self {
        Self {
            k,
            alphas: Alphas::Fixed(vec![Sign::Plus; k]),
            norm_constrained: false,
            reliable: false,
            bias: BiasMode::Free,
            solver: SolverConfig::default(),
            parallelism: 0,
            max_pattern_bits: Some(Self::DEFAULT_MAX_PATTERN_BITS),
            heuristic_starts: 3,
        }
    }

    pub fn with_alphas(mut self, alphas: Vec<Sign>) -> Self {
        self.alphas = Alphas::Fixed(alphas);
        self
    }

    pub fn unknown_alphas(mut self) -> Self {
        self.alphas = Alphas::Unknown;
        self
    }

    pub fn norm_constrained(mut self, on: bool) -> Self {
        self.norm_constrained = on;
        self
    }

    pub fn reliable(mut self, on: bool) -> Self {
        self.reliable = on;
        self
    }

    pub fn bias(mut self, mode: BiasMode) -> Self {
        self.bias = mode;
        self
    }

    pub fn solver(mut self, cfg: SolverConfig) -> Self {
        self.solver = cfg;
        self
    }

    pub fn parallelism(mut self, jobs: usize) -> Self {
        self.parallelism = jobs;
        self
    }

    pub fn max_pattern_bits(mut self, limit: Option<usize>) -> Self {
        self.max_pattern_bits = limit;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        if let Alphas::Fixed(a) = &self.alphas {
            if a.len() != self.k {
                return Err(invalid(format!("{} coefficients given for k = {}", a.len(), self.k)));
            }
        }
        if self.reliable && self.alphas == Alphas::Unknown {
            return Err(invalid(
                "reliable training requires fixed coefficients; unknown signs are not supported",
            ));
        }
        self.solver.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub net: ReluNet,
    /// Squared training error of `net`.
    pub error: f64,
    pub pattern: ActivationPattern,
    /// Complete patterns whose convex problem was evaluated.
    pub patterns_searched: usize,
    pub patterns_infeasible: usize,
    /// Subtrees cut by the lower bound (diagnostic; depends on scheduling).
    pub subtrees_pruned: usize,
    /// Convex solves performed (diagnostic; depends on scheduling).
    pub solves: usize,
}

/// Variable layout: unit `j` owns `n` weights followed by an optional bias.
#[derive(Clone, Debug)]
struct Layout {
    n: usize,
    k: usize,
    has_bias: bool,
    alphas: Vec<Sign>,
}

impl Layout {
    fn stride(&self) -> usize {
        self.n + usize::from(self.has_bias)
    }

    fn num_vars(&self) -> usize {
        self.k * self.stride()
    }

    fn affine_form(&self, j: usize, x: &[f64]) -> LinearForm {
        let base = j * self.stride();
        let mut form: LinearForm = x
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(d, v)| (base + d, *v))
            .collect();
        if self.has_bias {
            form.push((base + self.n, 1.0));
        }
        form
    }

    fn scaled_affine_form(&self, j: usize, x: &[f64], scale: f64) -> LinearForm {
        let mut f = self.affine_form(j, x);
        for t in &mut f {
            t.1 *= scale;
        }
        f
    }

    fn affine_value(&self, w: &[f64], j: usize, x: &[f64]) -> f64 {
        let base = j * self.stride();
        let lin: f64 = x.iter().zip(&w[base..base + self.n]).map(|(a, b)| a * b).sum();
        if self.has_bias {
            lin + w[base + self.n]
        } else {
            lin
        }
    }

    fn add_norm_constraints(&self, p: &mut ConstrainedLsq) {
        for j in 0..self.k {
            let base = j * self.stride();
            p.add_ball_group((base..base + self.n).collect());
            if self.has_bias {
                p.add_box(base + self.n, -1.0, 1.0);
            }
        }
    }

    fn to_net(&self, w: &[f64]) -> ReluNet {
        let s = self.stride();
        let weights = (0..self.k).map(|j| w[j * s..j * s + self.n].to_vec()).collect();
        let biases = (0..self.k)
            .map(|j| if self.has_bias { w[j * s + self.n] } else { 0.0 })
            .collect();
        ReluNet::new(self.alphas.clone(), weights, biases).expect("layout produces a valid net")
    }
}

/// Samples sharing one input point; they share their pattern bits.
#[derive(Clone, Debug)]
struct Group {
    point: Vec<f64>,
    labels: Vec<f64>,
    samples: Vec<usize>,
    /// All units pinned inactive (reliable mode, some label is zero).
    forced: bool,
}

fn group_samples(s: &SampleSet, reliable: bool, dedup: bool) -> Vec<Group> {
    let mut groups: Vec<Group> = Vec::new();
    let mut index: std::collections::HashMap<Vec<u64>, usize> = std::collections::HashMap::new();
    for (i, (x, y)) in s.iter().enumerate() {
        let key: Vec<u64> = x.iter().map(|v| (v + 0.0).to_bits()).collect();
        let slot = if dedup { index.get(&key).copied() } else { None };
        match slot {
            Some(g) => {
                groups[g].samples.push(i);
                groups[g].labels.push(y);
            }
            None => {
                if dedup {
                    index.insert(key, groups.len());
                }
                groups.push(Group {
                    point: x.to_vec(),
                    labels: vec![y],
                    samples: vec![i],
                    forced: false,
                });
            }
        }
    }
    if reliable {
        for g in &mut groups {
            g.forced = g.labels.contains(&0.0);
        }
    }
    groups
}

/// Builds the convex problem for one complete activation pattern.
///
/// Variables are `(w¹, b₁, …, wᵏ, bₖ)` (biases omitted under
/// [`BiasMode::Zero`]). Each residual keeps only the units marked active;
/// each bit adds `⟨wʲ, xᵢ⟩ + bⱼ ≥ 0` (active) or `≤ 0` (inactive). In
/// reliable mode every zero-labeled sample has all units forced inactive,
/// whatever the pattern says there.
pub fn pattern_constraints(
    pattern: &ActivationPattern,
    s: &SampleSet,
    opts: &TrainOptions,
) -> Result<ConstrainedLsq> {
    opts.validate()?;
    let Alphas::Fixed(alphas) = &opts.alphas else {
        return Err(invalid("pattern constraints need fixed coefficients"));
    };
    if pattern.k() != opts.k || (pattern.m() != s.m() && s.m() > 0) {
        return Err(invalid(format!(
            "pattern is {}x{}, problem is {}x{}",
            pattern.k(),
            pattern.m(),
            opts.k,
            s.m()
        )));
    }
    let layout = Layout {
        n: s.n(),
        k: opts.k,
        has_bias: opts.bias == BiasMode::Free,
        alphas: alphas.clone(),
    };
    let groups = group_samples(s, opts.reliable, false);
    let branch: Vec<usize> = (0..groups.len()).filter(|&g| !groups[g].forced).collect();
    let bits: Vec<bool> = branch
        .iter()
        .flat_map(|&g| {
            let i = groups[g].samples[0];
            (0..opts.k).map(move |j| pattern.get(j, i))
        })
        .collect();
    let ctx = Search::new(s, groups, branch, layout, opts.clone());
    Ok(ctx.node_problem(&bits))
}

#[derive(Clone, Debug)]
struct NodeSol {
    /// Unit variables.
    w: Vec<f64>,
    /// Relaxed output per branch position (meaningful past the node depth).
    f: Arc<[f64]>,
    value: f64,
    lb: f64,
}

#[derive(Clone, Debug)]
struct Candidate {
    error: f64,
    bits: Vec<bool>,
    net: ReluNet,
}

impl Candidate {
    fn better_than(&self, other: &Candidate) -> bool {
        (self.error, &self.bits) < (other.error, &other.bits)
    }
}

fn pick(a: Option<Candidate>, b: Option<Candidate>) -> Option<Candidate> {
    match (a, b) {
        (Some(a), Some(b)) => Some(if b.better_than(&a) { b } else { a }),
        (a, None) => a,
        (None, b) => b,
    }
}

/// A pending search node: the prefix, its parent's solution and the bounds
/// known before solving it.
struct Item {
    bits: Vec<bool>,
    parent: Option<Arc<NodeSol>>,
    lb: f64,
    const_part: f64,
    /// Per symmetric unit pair: rows equal so far.
    tied: Vec<bool>,
}

enum Eval {
    Pruned,
    Infeasible,
    /// Solution (absent if the solver failed) and lower bound.
    Node(Option<Arc<NodeSol>>, f64),
}

#[derive(Default)]
struct Counters {
    leaves: AtomicUsize,
    infeasible: AtomicUsize,
    pruned: AtomicUsize,
    solves: AtomicUsize,
    failures: AtomicUsize,
}

struct Search<'a> {
    samples: &'a SampleSet,
    groups: Vec<Group>,
    /// Group ids in enumeration order.
    branch: Vec<usize>,
    layout: Layout,
    opts: TrainOptions,
    relax: bool,
    relax_subsets: Vec<Vec<usize>>,
    /// Consecutive units with equal coefficients.
    sym_pairs: Vec<(usize, usize)>,
    forced_const: f64,
    /// Solver settings for node problems (accuracy `β/2`).
    node_cfg: SolverConfig,
    counters: Counters,
}

impl<'a> Search<'a> {
    fn new(
        samples: &'a SampleSet,
        groups: Vec<Group>,
        branch: Vec<usize>,
        layout: Layout,
        opts: TrainOptions,
    ) -> Self {
        let k = layout.k;
        let relax = layout.alphas.iter().all(|&a| a == Sign::Plus);
        let relax_subsets = if relax {
            let masks: Vec<usize> = if k <= 3 {
                (1..(1usize << k)).collect()
            } else {
                (0..k).map(|j| 1 << j).chain([(1 << k) - 1]).collect()
            };
            masks
                .into_iter()
                .map(|m| (0..k).filter(|j| m >> j & 1 == 1).collect())
                .collect()
        } else {
            vec![]
        };
        let mut sym_pairs = Vec::new();
        for sign in [Sign::Plus, Sign::Minus] {
            let members: Vec<usize> = (0..k).filter(|&j| layout.alphas[j] == sign).collect();
            sym_pairs.extend(members.windows(2).map(|w| (w[0], w[1])));
        }
        let node_cfg = SolverConfig {
            beta: 0.5 * opts.solver.beta,
            ..opts.solver
        };
        let forced_const = groups
            .iter()
            .filter(|g| g.forced)
            .flat_map(|g| g.labels.iter().map(|y| y * y))
            .sum();
        Self {
            samples,
            groups,
            branch,
            layout,
            opts,
            relax,
            relax_subsets,
            sym_pairs,
            forced_const,
            node_cfg,
            counters: Counters::default(),
        }
    }

    fn k(&self) -> usize {
        self.layout.k
    }

    fn depth_total(&self) -> usize {
        self.branch.len()
    }

    /// Convex problem for the prefix `bits` (positions `0..bits.len()/k`),
    /// with the remaining branch positions relaxed. Relaxation variables
    /// follow the unit variables in position order.
    fn node_problem(&self, bits: &[bool]) -> ConstrainedLsq {
        let depth = bits.len() / self.k();
        self.build_problem(bits, 0..depth, true, true)
    }

    /// Problem over the assigned `positions` only. Dropping terms and
    /// constraints never raises the minimum, so this bounds the full node.
    fn build_problem(
        &self,
        bits: &[bool],
        positions: impl IntoIterator<Item = usize>,
        with_forced: bool,
        with_relaxation: bool,
    ) -> ConstrainedLsq {
        let k = self.k();
        let depth = bits.len() / k;
        let nv = self.layout.num_vars();
        let relax = with_relaxation && self.relax;
        let relaxed = if relax { self.depth_total() - depth } else { 0 };
        let mut p = ConstrainedLsq::new(nv + relaxed);
        if self.opts.norm_constrained {
            self.layout.add_norm_constraints(&mut p);
        }
        if with_forced {
            for g in self.groups.iter().filter(|g| g.forced) {
                for j in 0..k {
                    p.add_inequality(self.layout.affine_form(j, &g.point), 0.0);
                }
                for &y in &g.labels {
                    p.add_residual(vec![], 0.0, y);
                }
            }
        }
        for pos in positions {
            let g = &self.groups[self.branch[pos]];
            let mut out: LinearForm = Vec::new();
            for j in 0..k {
                if bits[pos * k + j] {
                    p.add_inequality(self.layout.scaled_affine_form(j, &g.point, -1.0), 0.0);
                    out.extend(self.layout.scaled_affine_form(
                        j,
                        &g.point,
                        self.layout.alphas[j].value(),
                    ));
                } else {
                    p.add_inequality(self.layout.affine_form(j, &g.point), 0.0);
                }
            }
            for &y in &g.labels {
                p.add_residual(out.clone(), 0.0, y);
            }
        }
        if relax {
            for (r, &gid) in self.branch[depth..].iter().enumerate() {
                let g = &self.groups[gid];
                let fv = nv + r;
                p.add_inequality(vec![(fv, -1.0)], 0.0);
                for subset in &self.relax_subsets {
                    let mut form: LinearForm = subset
                        .iter()
                        .flat_map(|&j| self.layout.affine_form(j, &g.point))
                        .collect();
                    form.push((fv, -1.0));
                    p.add_inequality(form, 0.0);
                }
                for &y in &g.labels {
                    p.add_residual(vec![(fv, 1.0)], 0.0, y);
                }
            }
        }
        p
    }

    /// Lower bound from the newest position and its nearest assigned
    /// neighbours; `None` when the prefix is already small.
    fn local_bound(&self, bits: &[bool]) -> Option<f64> {
        let k = self.k();
        let depth = bits.len() / k;
        let size = 4 * (self.layout.n + 1) * k + 8;
        if depth == 0 || self.depth_total() < 2 * size {
            return None;
        }
        let newest = depth - 1;
        let x = &self.groups[self.branch[newest]].point;
        // Inactive neighbours carry no residual, so half the budget goes to
        // the nearest points with an active unit.
        let dist = |pos: usize| -> f64 {
            let y = &self.groups[self.branch[pos]].point;
            x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
        };
        let active = |pos: usize| bits[pos * k..(pos + 1) * k].iter().any(|&b| b);
        let nearest = |filter: &dyn Fn(usize) -> bool, count: usize| -> Vec<usize> {
            let mut near: Vec<(f64, usize)> =
                (0..newest).filter(|&p| filter(p)).map(|p| (dist(p), p)).collect();
            if count < near.len() {
                near.select_nth_unstable_by(count, |a, b| {
                    a.partial_cmp(b).expect("finite distances")
                });
                near.truncate(count);
            }
            near.into_iter().map(|(_, p)| p).collect()
        };
        let mut chosen = nearest(&|p| active(p), size / 2);
        chosen.extend(nearest(&|p| !active(p), size - 1 - chosen.len()));
        let near = chosen;
        let mut positions = near;
        positions.sort_unstable();
        positions.push(newest);
        let problem = self.build_problem(bits, positions, false, false);
        self.counters.solves.fetch_add(1, Ordering::Relaxed);
        match solve_unchecked(&problem, &self.node_cfg) {
            Ok(sol) => Some(sol.lower_bound),
            Err(Error::Infeasible) => Some(f64::INFINITY),
            Err(_) => None,
        }
    }

    fn solve_node(&self, bits: &[bool]) -> Result<NodeSol> {
        let depth = bits.len() / self.k();
        let problem = self.node_problem(bits);
        self.counters.solves.fetch_add(1, Ordering::Relaxed);
        let Solution {
            x,
            value,
            lower_bound,
            ..
        } = solve_unchecked(&problem, &self.node_cfg)?;
        let nv = self.layout.num_vars();
        let mut f = vec![0.0; self.depth_total()];
        if self.relax {
            f[depth..].copy_from_slice(&x[nv..]);
        }
        Ok(NodeSol {
            w: x[..nv].to_vec(),
            f: f.into(),
            value,
            lb: lower_bound,
        })
    }

    /// Residual contribution of branch position `pos` under `unit_bits`,
    /// evaluated at the parent's point; `None` if the signs disagree.
    fn exact_contribution(&self, parent: &NodeSol, pos: usize, unit_bits: &[bool]) -> Option<f64> {
        let g = &self.groups[self.branch[pos]];
        let mut out = 0.0;
        for (j, &active) in unit_bits.iter().enumerate() {
            let a = self.layout.affine_value(&parent.w, j, &g.point);
            if active {
                if a < 0.0 {
                    return None;
                }
                out += self.layout.alphas[j].value() * a;
            } else if a > 0.0 {
                return None;
            }
        }
        Some(g.labels.iter().map(|y| (out - y) * (out - y)).sum())
    }

    fn relaxed_contribution(&self, parent: &NodeSol, pos: usize) -> f64 {
        if !self.relax {
            return 0.0;
        }
        let g = &self.groups[self.branch[pos]];
        let f = parent.f[pos];
        g.labels.iter().map(|y| (f - y) * (f - y)).sum()
    }

    /// Subtrees whose lower bound exceeds this cannot improve on `best` by
    /// more than `β/2`.
    fn cutoff(&self, best: f64) -> f64 {
        best - 0.5 * self.opts.solver.beta
    }

    fn finalize(&self, bits: Vec<bool>, w: &[f64]) -> Candidate {
        let polished = polish(&self.node_problem(&bits), w);
        let mut net = self.layout.to_net(polished.as_deref().unwrap_or(w));
        if self.opts.reliable && self.layout.has_bias {
            let forced: Vec<&[f64]> = self
                .groups
                .iter()
                .filter(|g| g.forced)
                .map(|g| g.point.as_slice())
                .collect();
            enforce_zero_outputs(&mut net, &forced, self.opts.norm_constrained);
        }
        let error = squared_loss(&net, self.samples).expect("dimensions checked");
        Candidate { error, bits, net }
    }

    /// Checks the sorted-rows rule for the units in `unit_bits`; updates ties.
    fn canonical_step(&self, tied: &mut [bool], unit_bits: &[bool]) -> bool {
        for (p, &(a, b)) in self.sym_pairs.iter().enumerate() {
            if tied[p] && unit_bits[a] != unit_bits[b] {
                if unit_bits[a] {
                    return false;
                }
                tied[p] = false;
            }
        }
        true
    }

    /// Evaluates one popped node: inherit the parent's point when it is
    /// certified for this node, otherwise try the local bound, then solve.
    fn evaluate(&self, item: &Item, cutoff: f64) -> Eval {
        let k = self.k();
        let depth = item.bits.len() / k;
        if let (Some(par), true) = (item.parent.as_deref(), depth > 0) {
            let pos = depth - 1;
            if let Some(exact) = self.exact_contribution(par, pos, &item.bits[pos * k..]) {
                let value = par.value - self.relaxed_contribution(par, pos) + exact;
                if value - par.lb <= self.node_cfg.beta {
                    let mut inherited = par.clone();
                    inherited.value = value;
                    return Eval::Node(Some(Arc::new(inherited)), item.lb);
                }
            }
        }
        if let Some(local) = self.local_bound(&item.bits) {
            if local > cutoff {
                return Eval::Pruned;
            }
        }
        match self.solve_node(&item.bits) {
            Ok(sol) => {
                let lb = item.lb.max(sol.lb);
                Eval::Node(Some(Arc::new(sol)), lb)
            }
            Err(Error::Infeasible) => Eval::Infeasible,
            Err(_) => {
                self.counters.failures.fetch_add(1, Ordering::Relaxed);
                // A leaf is never dropped for want of a certificate: its point
                // from a looser solve is still a valid network.
                let leaf = item.bits.len() == self.depth_total() * k;
                let loose = SolverConfig {
                    beta: self.node_cfg.beta.max(LEAF_RETRY_BETA),
                    ..self.node_cfg
                };
                let retry = leaf
                    .then(|| solve_unchecked(&self.node_problem(&item.bits), &loose).ok())
                    .flatten()
                    .map(|sol| {
                        Arc::new(NodeSol {
                            w: sol.x,
                            f: Arc::from(vec![0.0; 0]),
                            value: sol.value,
                            lb: sol.lower_bound,
                        })
                    });
                Eval::Node(retry, item.lb)
            }
        }
    }

    /// Children of an evaluated node, skipping non-canonical unit orders.
    /// The child agreeing with the node's solution comes first (it can
    /// usually inherit that solution), the rest in enumeration order.
    fn children(&self, item: &Item, node: Option<Arc<NodeSol>>, lb: f64) -> Vec<Item> {
        let k = self.k();
        let depth = item.bits.len() / k;
        let g = &self.groups[self.branch[depth]];
        let zero_out: f64 = g.labels.iter().map(|y| y * y).sum();
        let mut combos: Vec<usize> = (0..1usize << k).collect();
        if let Some(sol) = node.as_deref() {
            let guided = (0..k).fold(0usize, |acc, j| {
                let active = self.layout.affine_value(&sol.w, j, &g.point) >= 0.0;
                acc | usize::from(active) << (k - 1 - j)
            });
            combos.retain(|&c| c != guided);
            combos.insert(0, guided);
        }
        combos
            .into_iter()
            .filter_map(|combo| {
                let unit_bits: Vec<bool> = (0..k).map(|j| combo >> (k - 1 - j) & 1 == 1).collect();
                let mut tied = item.tied.clone();
                if !self.canonical_step(&mut tied, &unit_bits) {
                    return None;
                }
                let const_part = if unit_bits.iter().any(|&b| b) {
                    item.const_part
                } else {
                    item.const_part + zero_out
                };
                let mut bits = item.bits.clone();
                bits.extend(&unit_bits);
                Some(Item {
                    bits,
                    parent: node.clone(),
                    lb,
                    const_part,
                    tied,
                })
            })
            .collect()
    }

    /// Depth-first branch and bound from the root, starting from the
    /// incumbent error `best`.
    fn search(&self, mut best: f64) -> Option<Candidate> {
        let mut stack = vec![Item {
            bits: Vec::new(),
            parent: None,
            lb: 0.0,
            const_part: self.forced_const,
            tied: vec![true; self.sym_pairs.len()],
        }];
        let mut found: Option<Candidate> = None;
        let total = self.depth_total();
        while !stack.is_empty() {
            let cutoff = self.cutoff(best);
            let mut batch = Vec::with_capacity(BATCH);
            while batch.len() < BATCH {
                let Some(item) = stack.pop() else { break };
                if item.lb.max(item.const_part) > cutoff {
                    self.counters.pruned.fetch_add(1, Ordering::Relaxed);
                } else {
                    batch.push(item);
                }
            }
            let evals: Vec<Eval> = batch.par_iter().map(|it| self.evaluate(it, cutoff)).collect();
            // Deepest-first pop order: apply in reverse so the first popped
            // node's children end up on top of the stack.
            for (item, eval) in batch.into_iter().zip(evals).rev() {
                let (node, lb) = match eval {
                    Eval::Pruned => {
                        self.counters.pruned.fetch_add(1, Ordering::Relaxed);
                        continue;
                    }
                    Eval::Infeasible => {
                        self.counters.infeasible.fetch_add(1, Ordering::Relaxed);
                        continue;
                    }
                    Eval::Node(node, lb) => (node, lb),
                };
                if lb > self.cutoff(best) {
                    self.counters.pruned.fetch_add(1, Ordering::Relaxed);
                    continue;
                }
                if item.bits.len() == total * self.k() {
                    self.counters.leaves.fetch_add(1, Ordering::Relaxed);
                    if let Some(sol) = node {
                        let cand = self.finalize(item.bits, &sol.w);
                        best = best.min(cand.error);
                        found = pick(found, Some(cand));
                    }
                    continue;
                }
                let mut kids = self.children(&item, node, lb);
                kids.reverse();
                stack.extend(kids);
            }
        }
        found
    }

    /// Local search: refit with the current signs and no sign constraints,
    /// re-read the signs, repeat. Returns a sorted-row pattern.
    fn local_search(&self, start: Vec<bool>) -> Vec<bool> {
        let k = self.k();
        let mut bits = start;
        for _ in 0..12 {
            let mut p = self.node_problem(&bits);
            p.inequalities.clear();
            if self.opts.norm_constrained {
                p.ball_groups.clear();
                p.box_vars.clear();
                self.layout.add_norm_constraints(&mut p);
            }
            for g in self.groups.iter().filter(|g| g.forced) {
                for j in 0..k {
                    p.add_inequality(self.layout.affine_form(j, &g.point), 0.0);
                }
            }
            let Ok(sol) = solve_unchecked(&p, &self.node_cfg) else {
                break;
            };
            let next = self.signs_at(&sol.x);
            if next == bits {
                break;
            }
            bits = next;
        }
        self.sort_rows(bits)
    }

    /// Adam on the network loss (plus a penalty keeping forced points
    /// inactive), projected onto the norm constraints when they apply.
    fn descend(&self, mut w: Vec<f64>) -> Vec<f64> {
        const STEPS: usize = 400;
        const RATE: f64 = 0.02;
        let (b1, b2): (f64, f64) = (0.9, 0.999);
        let (k, stride, n) = (self.k(), self.layout.stride(), self.layout.n);
        let mut m1 = vec![0.0; w.len()];
        let mut m2 = vec![0.0; w.len()];
        let mut grad = vec![0.0; w.len()];
        let mut z = vec![0.0; k];
        for t in 1..=STEPS {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for g in &self.groups {
                for (j, zj) in z.iter_mut().enumerate() {
                    *zj = self.layout.affine_value(&w, j, &g.point);
                }
                // d/dz_j of the group loss, by unit.
                let coef: Vec<f64> = if g.forced {
                    z.iter().map(|&v| 2.0 * v.max(0.0) * g.labels.len() as f64).collect()
                } else {
                    let out: f64 = (0..k).map(|j| self.layout.alphas[j].value() * z[j].max(0.0)).sum();
                    let r: f64 = g.labels.iter().map(|y| 2.0 * (out - y)).sum();
                    (0..k)
                        .map(|j| if z[j] > 0.0 { r * self.layout.alphas[j].value() } else { 0.0 })
                        .collect()
                };
                for (j, &c) in coef.iter().enumerate() {
                    if c == 0.0 {
                        continue;
                    }
                    let base = j * stride;
                    for (d, &x) in g.point.iter().enumerate() {
                        grad[base + d] += c * x;
                    }
                    if self.layout.has_bias {
                        grad[base + n] += c;
                    }
                }
            }
            let (c1, c2) = (1.0 - b1.powi(t as i32), 1.0 - b2.powi(t as i32));
            for i in 0..w.len() {
                m1[i] = b1 * m1[i] + (1.0 - b1) * grad[i];
                m2[i] = b2 * m2[i] + (1.0 - b2) * grad[i] * grad[i];
                w[i] -= RATE * (m1[i] / c1) / ((m2[i] / c2).sqrt() + 1e-12);
            }
            if self.opts.norm_constrained {
                for j in 0..k {
                    let base = j * stride;
                    let norm = w[base..base + n].iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm > 1.0 {
                        w[base..base + n].iter_mut().for_each(|v| *v /= norm);
                    }
                    if self.layout.has_bias {
                        w[base + n] = w[base + n].clamp(-1.0, 1.0);
                    }
                }
            }
        }
        w
    }

    fn signs_at(&self, w: &[f64]) -> Vec<bool> {
        self.branch
            .iter()
            .flat_map(|&gid| {
                let x = &self.groups[gid].point;
                (0..self.k()).map(move |j| self.layout.affine_value(w, j, x) >= 0.0)
            })
            .collect()
    }

    /// Permutes units within each coefficient class so rows are ascending.
    fn sort_rows(&self, bits: Vec<bool>) -> Vec<bool> {
        let k = self.k();
        let total = self.depth_total();
        let row = |j: usize| -> Vec<bool> { (0..total).map(|p| bits[p * k + j]).collect() };
        let mut order: Vec<usize> = (0..k).collect();
        for sign in [Sign::Plus, Sign::Minus] {
            let slots: Vec<usize> = (0..k).filter(|&j| self.layout.alphas[j] == sign).collect();
            let mut members = slots.clone();
            members.sort_by_key(|&j| row(j));
            for (slot, member) in slots.into_iter().zip(members) {
                order[slot] = member;
            }
        }
        let mut out = vec![false; bits.len()];
        for p in 0..total {
            for (slot, &src) in order.iter().enumerate() {
                out[p * k + slot] = bits[p * k + src];
            }
        }
        out
    }

    fn incumbents(&self) -> Option<Candidate> {
        let k = self.k();
        let total = self.depth_total();
        let mut starts = vec![vec![true; total * k]];
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
        for _ in 0..self.opts.heuristic_starts {
            let w: Vec<f64> = (0..self.layout.num_vars())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            starts.push(self.signs_at(&w));
            starts.push(self.signs_at(&self.descend(w)));
        }
        let mut best: Option<Candidate> = None;
        let mut seen = std::collections::HashSet::new();
        for start in starts {
            let bits = self.local_search(start);
            if !seen.insert(bits.clone()) {
                continue;
            }
            self.counters.solves.fetch_add(1, Ordering::Relaxed);
            if let Ok(sol) = solve_unchecked(&self.node_problem(&bits), &self.node_cfg) {
                best = pick(best, Some(self.finalize(bits, &sol.x)));
            }
        }
        best
    }

    fn run(&self) -> Option<Candidate> {
        let incumbent = self.incumbents();
        let best = incumbent.as_ref().map_or(f64::INFINITY, |c| c.error);
        pick(incumbent, self.search(best))
    }

    fn pattern_of(&self, bits: &[bool]) -> ActivationPattern {
        let k = self.k();
        let mut pattern = ActivationPattern::all_inactive(k, self.samples.m());
        for (pos, &gid) in self.branch.iter().enumerate() {
            for &i in &self.groups[gid].samples {
                for j in 0..k {
                    pattern.set(j, i, bits[pos * k + j]);
                }
            }
        }
        pattern
    }
}

/// Lowers biases until every unit is non-positive at each `point`, so the
/// network output there is exactly zero.
fn enforce_zero_outputs(net: &mut ReluNet, points: &[&[f64]], clamp_unit_box: bool) {
    for j in 0..net.k() {
        for _ in 0..64 {
            let worst = points
                .iter()
                .map(|x| net.affine(j, x))
                .fold(f64::NEG_INFINITY, f64::max);
            if worst <= 0.0 {
                break;
            }
            let b = &mut net.biases_mut()[j];
            let step = worst.max(f64::EPSILON * b.abs().max(f64::MIN_POSITIVE));
            *b -= step;
            if clamp_unit_box && *b < -1.0 {
                *b = -1.0;
                break;
            }
        }
    }
}

fn check_inputs(s: &SampleSet, opts: &TrainOptions) -> Result<()> {
    opts.validate()?;
    if s.is_empty() {
        return Err(invalid("training needs at least one sample"));
    }
    Ok(())
}

fn budget_check(branch_points: usize, opts: &TrainOptions) -> Result<()> {
    let extra = if opts.alphas == Alphas::Unknown { opts.k } else { 0 };
    let bits = opts.k * branch_points + extra;
    match opts.max_pattern_bits {
        Some(limit) if bits > limit => Err(Error::BudgetExceeded(format!(
            "{bits} pattern bits exceed the limit of {limit}"
        ))),
        _ => Ok(()),
    }
}

fn train_fixed(s: &SampleSet, opts: &TrainOptions, alphas: Vec<Sign>) -> Result<TrainResult> {
    let groups = group_samples(s, opts.reliable, true);
    let branch: Vec<usize> = (0..groups.len()).filter(|&g| !groups[g].forced).collect();
    let layout = Layout {
        n: s.n(),
        k: opts.k,
        has_bias: opts.bias == BiasMode::Free,
        alphas,
    };
    let mut opts = opts.clone();
    opts.alphas = Alphas::Fixed(layout.alphas.clone());
    let search = Search::new(s, groups, branch, layout, opts);

    let run = || search.run();
    let best = if search.opts.parallelism == 0 {
        run()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(search.opts.parallelism)
            .stack_size(64 << 20)
            .build()
            .map_err(|e| invalid(format!("thread pool: {e}")))?
            .install(run)
    };
    let c = &search.counters;
    let best = best.ok_or_else(|| {
        Error::NonConverged(format!(
            "no pattern could be solved ({} solver failures)",
            c.failures.load(Ordering::Relaxed)
        ))
    })?;
    Ok(TrainResult {
        pattern: search.pattern_of(&best.bits),
        net: best.net,
        error: best.error,
        patterns_searched: c.leaves.load(Ordering::Relaxed),
        patterns_infeasible: c.infeasible.load(Ordering::Relaxed),
        subtrees_pruned: c.pruned.load(Ordering::Relaxed),
        solves: c.solves.load(Ordering::Relaxed),
    })
}

fn branch_points(s: &SampleSet, reliable: bool) -> usize {
    group_samples(s, reliable, true)
        .iter()
        .filter(|g| !g.forced)
        .count()
}

/// Minimizes the squared training error over all networks with the given
/// options, to within `opts.solver.beta` of the global minimum.
pub fn train_exact(s: &SampleSet, opts: &TrainOptions) -> Result<TrainResult> {
    check_inputs(s, opts)?;
    match &opts.alphas {
        Alphas::Fixed(a) => {
            budget_check(branch_points(s, opts.reliable), opts)?;
            train_fixed(s, opts, a.clone())
        }
        Alphas::Unknown => train_exact_unknown_coeffs(s, opts),
    }
}

/// Minimum of [`train_exact`] over every coefficient sign vector. Sign vectors
/// that are permutations of each other describe the same networks, so one
/// representative per count of `+1`s is searched.
pub fn train_exact_unknown_coeffs(s: &SampleSet, opts: &TrainOptions) -> Result<TrainResult> {
    let mut opts = opts.clone();
    opts.alphas = Alphas::Unknown;
    check_inputs(s, &opts)?;
    budget_check(branch_points(s, opts.reliable), &opts)?;
    let k = opts.k;
    let mut best: Option<TrainResult> = None;
    let mut last_err = None;
    for plus in (0..=k).rev() {
        let alphas: Vec<Sign> = (0..k)
            .map(|j| if j < plus { Sign::Plus } else { Sign::Minus })
            .collect();
        match train_fixed(s, &opts, alphas) {
            Ok(r) => {
                let better = best.as_ref().is_none_or(|b| r.error < b.error);
                let (searched, infeasible, pruned, solves) = best.as_ref().map_or((0, 0, 0, 0), |b| {
                    (b.patterns_searched, b.patterns_infeasible, b.subtrees_pruned, b.solves)
                });
                let mut merged = if better { r } else { best.take().expect("best is set") };
                if better {
                    merged.patterns_searched += searched;
                    merged.patterns_infeasible += infeasible;
                    merged.subtrees_pruned += pruned;
                    merged.solves += solves;
                }
                best = Some(merged);
            }
            Err(e @ Error::NonConverged(_)) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or_else(|| Error::NonConverged("no sign vector".into())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{eval_net, relu};

    fn set(points: &[&[f64]], labels: &[f64]) -> SampleSet {
        SampleSet::new(points.iter().map(|p| p.to_vec()).collect(), labels.to_vec()).unwrap()
    }

    #[test]
    fn single_active_pattern_problem() {
        let s = set(&[&[1.0]], &[1.0]);
        let opts = TrainOptions::new(1);
        let pat = ActivationPattern::new(vec![vec![true]]).unwrap();
        let p = pattern_constraints(&pat, &s, &opts).unwrap();
        assert_eq!(p.num_vars, 2);
        assert_eq!(p.residual_terms.len(), 1);
        assert_eq!(p.residual_terms[0].coeffs, vec![(0, 1.0), (1, 1.0)]);
        assert_eq!(p.residual_terms[0].target, 1.0);
        // −(w₁ + b) ≤ 0
        assert_eq!(p.inequalities.len(), 1);
        assert_eq!(p.inequalities[0].coeffs, vec![(0, -1.0), (1, -1.0)]);
    }

    #[test]
    fn single_inactive_pattern_problem() {
        let s = set(&[&[1.0]], &[1.0]);
        let pat = ActivationPattern::new(vec![vec![false]]).unwrap();
        let p = pattern_constraints(&pat, &s, &TrainOptions::new(1)).unwrap();
        assert!(p.residual_terms[0].coeffs.is_empty());
        assert_eq!(p.objective(&[0.3, -7.0]), 1.0);
        assert_eq!(p.inequalities[0].coeffs, vec![(0, 1.0), (1, 1.0)]);
    }

    #[test]
    fn reliable_pattern_forces_zero_labels_inactive() {
        let s = set(&[&[1.0], &[2.0]], &[0.0, 3.0]);
        let opts = TrainOptions::new(2).reliable(true);
        let pat = ActivationPattern::new(vec![vec![true, true], vec![true, false]]).unwrap();
        let p = pattern_constraints(&pat, &s, &opts).unwrap();
        // Sample 0 contributes only the constant 0² and two "≤ 0" rows.
        let consts: Vec<_> = p.residual_terms.iter().filter(|t| t.coeffs.is_empty()).collect();
        assert_eq!(consts.len(), 1);
        assert_eq!(consts[0].target, 0.0);
        // Both units pinned "≤ 0" at x = 1: rows w + b with positive signs.
        let pinned = p
            .inequalities
            .iter()
            .filter(|c| c.coeffs.iter().all(|&(_, v)| v == 1.0))
            .count();
        assert_eq!(pinned, 2);
        assert_eq!(p.inequalities.len(), 4);
    }

    #[test]
    fn realizable_single_unit_is_recovered() {
        let (w, b) = (0.7, -0.2);
        let xs = [-1.0, -0.4, 0.1, 0.5, 0.9, 1.3];
        let s = SampleSet::new(
            xs.iter().map(|&x| vec![x]).collect(),
            xs.iter().map(|&x| relu(w * x + b)).collect(),
        )
        .unwrap();
        let r = train_exact(&s, &TrainOptions::new(1)).unwrap();
        assert!(r.error <= 1e-6, "error {}", r.error);
        assert!((r.error - squared_loss(&r.net, &s).unwrap()).abs() <= 1e-9 * (1.0 + r.error));
    }

    #[test]
    fn pattern_is_consistent_with_net() {
        let s = set(&[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, -1.0], &[0.5, 0.5]], &[1.0, 0.0, 2.0, 0.3]);
        let r = train_exact(&s, &TrainOptions::new(2)).unwrap();
        let tol = 1e-7;
        for j in 0..2 {
            for (i, x) in s.points().iter().enumerate() {
                let a = r.net.affine(j, x);
                if r.pattern.get(j, i) {
                    assert!(a >= -tol);
                } else {
                    assert!(a <= tol);
                }
            }
        }
    }

    #[test]
    fn reliable_outputs_exact_zero() {
        let s = set(
            &[&[1.0, 0.2], &[-0.5, 0.4], &[0.3, -0.9], &[0.8, 0.8], &[-0.2, -0.1]],
            &[0.9, 0.0, 0.4, 0.0, 0.2],
        );
        let opts = TrainOptions::new(2).reliable(true).norm_constrained(true);
        let r = train_exact(&s, &opts).unwrap();
        for (x, y) in s.iter() {
            if y == 0.0 {
                assert_eq!(eval_net(&r.net, x).unwrap(), 0.0);
            }
        }
        assert!(r.net.is_normalized());
        let free = train_exact(&s, &TrainOptions::new(2).norm_constrained(true)).unwrap();
        assert!(free.error <= r.error + 1e-8);
    }

    #[test]
    fn negative_coefficient_needs_unknown_signs() {
        let xs = [-1.0, -0.3, 0.2, 0.6, 1.0];
        let s = SampleSet::new(
            xs.iter().map(|&x| vec![x]).collect(),
            xs.iter().map(|&x| -relu(0.8 * x - 0.1)).collect(),
        )
        .unwrap();
        let unknown = train_exact(&s, &TrainOptions::new(1).unknown_alphas()).unwrap();
        assert!(unknown.error <= 1e-6);
        assert_eq!(unknown.net.alphas(), &[Sign::Minus]);
        let fixed = train_exact(&s, &TrainOptions::new(1)).unwrap();
        assert!(fixed.error > unknown.error + 1e-3);
    }

    #[test]
    fn all_zero_labels_fit_with_either_sign() {
        let s = set(&[&[1.0], &[-2.0], &[0.5]], &[0.0, 0.0, 0.0]);
        let r = train_exact(&s, &TrainOptions::new(1).unknown_alphas()).unwrap();
        assert!(r.error <= 1e-12);
        for a in [Sign::Plus, Sign::Minus] {
            let r = train_exact(&s, &TrainOptions::new(1).with_alphas(vec![a])).unwrap();
            assert!(r.error <= 1e-12);
        }
    }

    #[test]
    fn option_validation() {
        let s = set(&[&[1.0]], &[1.0]);
        assert!(train_exact(&s, &TrainOptions::new(0)).is_err());
        let wrong_len = TrainOptions::new(2).with_alphas(vec![Sign::Plus]);
        assert!(train_exact(&s, &wrong_len).is_err());
        let bad = TrainOptions::new(1).unknown_alphas().reliable(true);
        assert!(matches!(train_exact(&s, &bad), Err(Error::Validation(_))));
        let empty = SampleSet::with_dim(1, vec![], vec![]).unwrap();
        assert!(train_exact(&empty, &TrainOptions::new(1)).is_err());
    }

    #[test]
    fn budget_guard_trips() {
        let pts: Vec<Vec<f64>> = (0..31).map(|i| vec![i as f64]).collect();
        let s = SampleSet::new(pts, vec![1.0; 31]).unwrap();
        assert!(matches!(
            train_exact(&s, &TrainOptions::new(1)),
            Err(Error::BudgetExceeded(_))
        ));
        let pts: Vec<Vec<f64>> = (0..15).map(|i| vec![i as f64]).collect();
        let s = SampleSet::new(pts, vec![1.0; 15]).unwrap();
        assert!(matches!(
            train_exact(&s, &TrainOptions::new(2).unknown_alphas()),
            Err(Error::BudgetExceeded(_))
        ));
    }

    #[test]
    fn duplicates_do_not_count_toward_budget() {
        let pts: Vec<Vec<f64>> = (0..40).map(|i| vec![(i % 4) as f64]).collect();
        let labels: Vec<f64> = (0..40).map(|i| (i % 4) as f64 * 0.5).collect();
        let s = SampleSet::new(pts, labels).unwrap();
        let r = train_exact(&s, &TrainOptions::new(1)).unwrap();
        assert!(r.error <= 1e-6);
    }

    #[test]
    fn result_does_not_depend_on_worker_count() {
        let s = set(
            &[&[1.0, 0.0], &[0.0, 1.0], &[-1.0, 0.5], &[0.5, -0.5], &[0.2, 0.9]],
            &[1.0, 0.5, 0.0, 0.7, 0.1],
        );
        let one = train_exact(&s, &TrainOptions::new(2).parallelism(1)).unwrap();
        let four = train_exact(&s, &TrainOptions::new(2).parallelism(4)).unwrap();
        assert_eq!(one.error.to_bits(), four.error.to_bits());
        assert_eq!(one.net, four.net);
        assert_eq!(one.pattern, four.pattern);
    }
}
