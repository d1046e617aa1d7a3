//! Brute-force optimizers that validate the exact trainer: an exhaustive
//! weight grid and seeded random probing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{relu, squared_loss, ReluNet, SampleSet, Sign};

/// Largest number of grid points `grid_search_train` will visit.
pub const GRID_LIMIT: f64 = 1e8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub net: ReluNet,
    pub error: f64,
    pub points_evaluated: u64,
}

/// Evaluates the loss at every net whose weights and biases lie on
/// `lo + (hi − lo)·i/steps`, with `steps = round((hi − lo)/step)`.
/// Ties go to the first grid point in lexicographic order (unit 0 most
/// significant, weights before bias).
pub fn grid_search_train(
    s: &SampleSet,
    alphas: &[Sign],
    bounds: (f64, f64),
    step: f64,
) -> Result<GridResult> {
    let (lo, hi) = bounds;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(invalid(format!("bad grid bounds [{lo}, {hi}]")));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(invalid(format!("grid step must be positive, got {step}")));
    }
    let k = alphas.len();
    let n = s.n();
    let steps = ((hi - lo) / step).round() as usize;
    let values: Vec<f64> = (0..=steps)
        .map(|i| if steps == 0 { lo } else { lo + (hi - lo) * i as f64 / steps as f64 })
        .collect();
    let total = (values.len() as f64).powi((k * (n + 1)) as i32);
    if total > GRID_LIMIT {
        return Err(Error::BudgetExceeded(format!(
            "{}^{} = {total:e} grid points exceed {GRID_LIMIT:e}",
            values.len(),
            k * (n + 1)
        )));
    }
    if k == 0 {
        let net = ReluNet::empty();
        return Ok(GridResult {
            error: s.labels().iter().map(|y| y * y).sum(),
            net,
            points_evaluated: 1,
        });
    }

    // Each unit ranges over the same table of (w, b) tuples; precompute the
    // unit's outputs on every sample once.
    let unit_count = values.len().pow((n + 1) as u32);
    let unit_params = |mut idx: usize| -> Vec<f64> {
        let mut p = vec![0.0; n + 1];
        for slot in p.iter_mut().rev() {
            *slot = values[idx % values.len()];
            idx /= values.len();
        }
        p
    };
    let m = s.m();
    let outputs: Vec<f64> = (0..unit_count)
        .into_par_iter()
        .flat_map_iter(|u| {
            let p = unit_params(u);
            s.points()
                .iter()
                .map(move |x| relu(x.iter().zip(&p).map(|(a, b)| a * b).sum::<f64>() + p[n]))
                .collect::<Vec<_>>()
        })
        .collect();
    let signs: Vec<f64> = alphas.iter().map(|a| a.value()).collect();
    let labels = s.labels();

    let loss_of = |combo: u64, out: &mut [f64]| -> f64 {
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut rest = combo;
        for j in (0..k).rev() {
            let u = (rest % unit_count as u64) as usize;
            rest /= unit_count as u64;
            let row = &outputs[u * m..(u + 1) * m];
            for (o, v) in out.iter_mut().zip(row) {
                *o += signs[j] * v;
            }
        }
        out.iter().zip(labels).map(|(o, y)| (o - y) * (o - y)).sum()
    };
    let combos = (unit_count as u64).pow(k as u32);
    let (error, best) = (0..combos)
        .into_par_iter()
        .fold(
            || (f64::INFINITY, u64::MAX, vec![0.0; m]),
            |(be, bi, mut buf), c| {
                let e = loss_of(c, &mut buf);
                if e < be || (e == be && c < bi) {
                    (e, c, buf)
                } else {
                    (be, bi, buf)
                }
            },
        )
        .map(|(e, i, _)| (e, i))
        .reduce(
            || (f64::INFINITY, u64::MAX),
            |a, b| if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a },
        );

    let mut weights = Vec::with_capacity(k);
    let mut biases = Vec::with_capacity(k);
    let mut rest = best;
    let mut units = vec![0usize; k];
    for j in (0..k).rev() {
        units[j] = (rest % unit_count as u64) as usize;
        rest /= unit_count as u64;
    }
    for u in units {
        let p = unit_params(u);
        weights.push(p[..n].to_vec());
        biases.push(p[n]);
    }
    let net = ReluNet::new(alphas.to_vec(), weights, biases)?;
    Ok(GridResult {
        error,
        net,
        points_evaluated: combos,
    })
}

/// A point drawn uniformly from the unit ball in `n` dimensions: a normalized
/// Gaussian direction scaled by `U^{1/n}`.
pub fn ball_uniform<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    loop {
        let g: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            let r = rng.random::<f64>().powf(1.0 / n as f64);
            return g.into_iter().map(|v| v * r / norm).collect();
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeOptions {
    pub trials: usize,
    pub norm_constrained: bool,
    /// Half-width of the box weights and biases are drawn from when not
    /// norm constrained.
    pub box_bound: f64,
    pub seed: u64,
}

impl ProbeOptions {
    pub fn new(trials: usize, seed: u64) -> Self {
        Self {
            trials,
            norm_constrained: false,
            box_bound: 2.0,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub net: ReluNet,
    pub error: f64,
    pub trials: usize,
    pub seed: u64,
}

/// Smallest loss among `trials` random nets. Constrained draws take weights
/// uniform on the unit ball and biases uniform on `[−1, 1]`; otherwise every
/// parameter is uniform on `[−box_bound, box_bound]`.
pub fn random_probe(s: &SampleSet, alphas: &[Sign], opts: &ProbeOptions) -> Result<ProbeResult> {
    if opts.trials == 0 {
        return Err(invalid("random probing needs at least one trial"));
    }
    if !(opts.box_bound > 0.0 && opts.box_bound.is_finite()) {
        return Err(invalid(format!("box bound must be positive, got {}", opts.box_bound)));
    }
    let k = alphas.len();
    let n = s.n();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(f64, ReluNet)> = None;
    for _ in 0..opts.trials {
        let (weights, biases): (Vec<Vec<f64>>, Vec<f64>) = (0..k)
            .map(|_| {
                if opts.norm_constrained {
                    (ball_uniform(&mut rng, n), rng.random_range(-1.0..=1.0))
                } else {
                    let b = opts.box_bound;
                    (
                        (0..n).map(|_| rng.random_range(-b..=b)).collect(),
                        rng.random_range(-b..=b),
                    )
                }
            })
            .unzip();
        let net = if k == 0 {
            ReluNet::empty()
        } else {
            ReluNet::new(alphas.to_vec(), weights, biases)?
        };
        let e = if k == 0 {
            s.labels().iter().map(|y| y * y).sum()
        } else {
            squared_loss(&net, s)?
        };
        if best.as_ref().is_none_or(|(b, _)| e < *b) {
            best = Some((e, net));
        }
    }
    let (error, net) = best.expect("at least one trial");
    Ok(ProbeResult {
        net,
        error,
        trials: opts.trials,
        seed: opts.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(points: &[f64], labels: &[f64]) -> SampleSet {
        SampleSet::new(points.iter().map(|&p| vec![p]).collect(), labels.to_vec()).unwrap()
    }

    #[test]
    fn grid_finds_generating_net() {
        let xs = [-1.0, -0.3, 0.2, 0.7, 1.0];
        let ys: Vec<f64> = xs.iter().map(|&x| relu(0.5 * x)).collect();
        let r = grid_search_train(&set(&xs, &ys), &[Sign::Plus], (-1.0, 1.0), 0.1).unwrap();
        assert!(r.error < 1e-28);
        // (0.5, 0) is the only zero-loss grid point: a bias b ≠ 0 moves the kink.
        assert!((r.net.weights()[0][0] - 0.5).abs() < 1e-12);
        assert!(r.net.biases()[0].abs() < 1e-12);
        assert_eq!(r.points_evaluated, 21 * 21);
    }

    #[test]
    fn grid_zero_labels_pick_first_zero_point() {
        let r = grid_search_train(&set(&[0.5, 1.0], &[0.0, 0.0]), &[Sign::Plus], (-1.0, 1.0), 0.5)
            .unwrap();
        assert_eq!(r.error, 0.0);
        // First in lexicographic order: w = −1, b = −1.
        assert_eq!(r.net.weights()[0], vec![-1.0]);
        assert_eq!(r.net.biases()[0], -1.0);
    }

    #[test]
    fn grid_guard() {
        let s = SampleSet::new(vec![vec![0.0; 3]], vec![1.0]).unwrap();
        let e = grid_search_train(&s, &[Sign::Plus; 2], (-2.0, 2.0), 0.05);
        assert!(matches!(e, Err(Error::BudgetExceeded(_))));
    }

    #[test]
    fn probe_is_deterministic_and_k0_is_label_energy() {
        let s = set(&[0.1, 0.4], &[1.0, 2.0]);
        let a = random_probe(&s, &[Sign::Plus], &ProbeOptions::new(1, 9)).unwrap();
        let b = random_probe(&s, &[Sign::Plus], &ProbeOptions::new(1, 9)).unwrap();
        assert_eq!(a, b);
        let z = random_probe(&s, &[], &ProbeOptions::new(3, 9)).unwrap();
        assert_eq!(z.error, 5.0);
    }

    #[test]
    fn ball_points_stay_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for n in 1..6 {
            for _ in 0..200 {
                let p = ball_uniform(&mut rng, n);
                assert!(p.iter().map(|v| v * v).sum::<f64>() <= 1.0 + 1e-12);
            }
        }
    }
}
