use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::learners::SampleSource;
use crate::model::{eval_net, ReluNet, SampleSet, Sign};
use crate::oracle::ball_uniform;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SourceKind {
    /// `y = f(x)` for the ground truth `f`.
    Realizable,
    /// `y = f(x) + σ·g` with standard Gaussian `g`.
    Noisy { sigma: f64 },
    /// Half the mass as in `Realizable`; the other half on a small cluster
    /// whose labels are `f(x) + 1`, which no net fitting the rest can match.
    AdversarialMixture,
}

/// i.i.d. samples on the unit ball (ball-uniform inputs) labeled by a
/// ground-truth net.
#[derive(Clone, Debug)]
pub struct SyntheticSource {
    pub kind: SourceKind,
    pub ground_truth: ReluNet,
    pub seed: u64,
    rng: ChaCha8Rng,
    cluster: Vec<f64>,
}

impl SyntheticSource {
    pub fn new(kind: SourceKind, ground_truth: ReluNet, seed: u64) -> Result<Self> {
        let n = ground_truth
            .n()
            .ok_or_else(|| invalid("the ground truth needs at least one unit"))?;
        if let SourceKind::Noisy { sigma } = kind {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return Err(invalid(format!("noise level must be non-negative, got {sigma}")));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cluster = ball_uniform(&mut rng, n).into_iter().map(|v| 0.8 * v).collect();
        Ok(Self {
            kind,
            ground_truth,
            seed,
            rng,
            cluster,
        })
    }

    /// A random normalized net with `k` positive units: ball-uniform weights,
    /// biases uniform on `[−½, ½]`.
    pub fn random_truth(n: usize, k: usize, seed: u64) -> Result<ReluNet> {
        if n == 0 || k == 0 {
            return Err(invalid("the ground truth needs n ≥ 1 and k ≥ 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..k).map(|_| ball_uniform(&mut rng, n)).collect();
        let biases = (0..k).map(|_| rng.random_range(-0.5..=0.5)).collect();
        ReluNet::normalized(vec![Sign::Plus; k], weights, biases)
    }

    fn n(&self) -> usize {
        self.cluster.len()
    }

    fn draw_one(&mut self) -> (Vec<f64>, f64) {
        let n = self.n();
        match self.kind {
            SourceKind::Realizable => {
                let x = ball_uniform(&mut self.rng, n);
                let y = self.label(&x);
                (x, y)
            }
            SourceKind::Noisy { sigma } => {
                let x = ball_uniform(&mut self.rng, n);
                let g: f64 = self.rng.sample(StandardNormal);
                let y = self.label(&x) + sigma * g;
                (x, y)
            }
            SourceKind::AdversarialMixture => {
                if self.rng.random_bool(0.5) {
                    let x = ball_uniform(&mut self.rng, n);
                    let y = self.label(&x);
                    (x, y)
                } else {
                    let jitter = ball_uniform(&mut self.rng, n);
                    let x: Vec<f64> =
                        self.cluster.iter().zip(&jitter).map(|(c, j)| c + 0.1 * j).collect();
                    let y = self.label(&x) + 1.0;
                    (x, y)
                }
            }
        }
    }

    fn label(&self, x: &[f64]) -> f64 {
        eval_net(&self.ground_truth, x).expect("dimensions match the ground truth")
    }
}

impl SampleSource for SyntheticSource {
    fn dim(&self) -> usize {
        self.n()
    }

    fn draw(&mut self, m: usize) -> Result<SampleSet> {
        let (points, labels): (Vec<_>, Vec<_>) = (0..m).map(|_| self.draw_one()).unzip();
        SampleSet::with_dim(self.n(), points, labels)?.with_unit_ball(true)
    }
}

/// Serves the samples of a file in order; fails once they run out.
#[derive(Clone, Debug)]
pub struct FileSource {
    samples: SampleSet,
    next: usize,
}

impl FileSource {
    pub fn new(samples: SampleSet) -> Self {
        Self { samples, next: 0 }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::new(SampleSet::load(path)?))
    }
}

impl SampleSource for FileSource {
    fn dim(&self) -> usize {
        self.samples.n()
    }

    fn draw(&mut self, m: usize) -> Result<SampleSet> {
        let end = self.next + m;
        if end > self.samples.m() {
            return Err(invalid(format!(
                "sample file holds {} samples, {} requested",
                self.samples.m(),
                end
            )));
        }
        let points = self.samples.points()[self.next..end].to_vec();
        let labels = self.samples.labels()[self.next..end].to_vec();
        self.next = end;
        SampleSet::with_dim(self.samples.n(), points, labels)
    }
}

/// Wraps a source and keeps a copy of everything it hands out.
pub struct Recording<'a> {
    inner: &'a mut dyn SampleSource,
    pub drawn: Vec<SampleSet>,
}

impl<'a> Recording<'a> {
    pub fn new(inner: &'a mut dyn SampleSource) -> Self {
        Self {
            inner,
            drawn: Vec::new(),
        }
    }
}

impl SampleSource for Recording<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn draw(&mut self, m: usize) -> Result<SampleSet> {
        let s = self.inner.draw(m)?;
        self.drawn.push(s.clone());
        Ok(s)
    }
}

/// Parses `synthetic:KIND[:key=value,…]`, e.g.
/// `synthetic:realizable:n=3,k=1,seed=7` or `synthetic:noisy:sigma=0.1`.
/// Keys: `n` (default 2), `k` (default 1), `seed` (default 0), `truth_seed`
/// (default `seed + 1`), `sigma` (noisy only, default 0.1).
pub fn parse_synthetic(desc: &str) -> Result<SyntheticSource> {
    let rest = desc
        .strip_prefix("synthetic:")
        .ok_or_else(|| Error::Config(format!("source {desc:?} must start with synthetic:")))?;
    let (kind, params) = rest.split_once(':').unwrap_or((rest, ""));
    let mut n = 2usize;
    let mut k = 1usize;
    let mut seed = 0u64;
    let mut truth_seed = None;
    let mut sigma = 0.1f64;
    for kv in params.split(',').filter(|p| !p.is_empty()) {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {kv:?}")))?;
        let bad = || Error::Config(format!("bad value for {key}: {value:?}"));
        match key {
            "n" => n = value.parse().map_err(|_| bad())?,
            "k" => k = value.parse().map_err(|_| bad())?,
            "seed" => seed = value.parse().map_err(|_| bad())?,
            "truth_seed" => truth_seed = Some(value.parse().map_err(|_| bad())?),
            "sigma" => sigma = value.parse().map_err(|_| bad())?,
            other => return Err(Error::Config(format!("unknown source key {other:?}"))),
        }
    }
    let kind = match kind {
        "realizable" => SourceKind::Realizable,
        "noisy" => SourceKind::Noisy { sigma },
        "adversarial-mixture" => SourceKind::AdversarialMixture,
        other => return Err(Error::Config(format!("unknown source kind {other:?}"))),
    };
    let truth = SyntheticSource::random_truth(n, k, truth_seed.unwrap_or(seed.wrapping_add(1)))?;
    SyntheticSource::new(kind, truth, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn realizable_labels_match_truth() {
        let truth = SyntheticSource::random_truth(3, 2, 5).unwrap();
        let mut src = SyntheticSource::new(SourceKind::Realizable, truth.clone(), 1).unwrap();
        let s = src.draw(50).unwrap();
        assert!(s.unit_ball());
        for (x, y) in s.iter() {
            assert_eq!(eval_net(&truth, x).unwrap(), y);
        }
    }

    #[test]
    fn seeds_reproduce() {
        let a = parse_synthetic("synthetic:noisy:n=2,seed=3,sigma=0.2").unwrap().draw(10).unwrap();
        let b = parse_synthetic("synthetic:noisy:n=2,seed=3,sigma=0.2").unwrap().draw(10).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mixture_has_offset_cluster() {
        let mut src = parse_synthetic("synthetic:adversarial-mixture:n=2,seed=9").unwrap();
        let s = src.draw(400).unwrap();
        let off = s
            .iter()
            .filter(|(x, y)| (y - eval_net(&src.ground_truth, x).unwrap() - 1.0).abs() < 1e-12)
            .count();
        assert!((120..280).contains(&off));
    }

    #[test]
    fn file_source_runs_out() {
        let s = SampleSet::new(vec![vec![0.1], vec![0.2]], vec![1.0, 2.0]).unwrap();
        let mut src = FileSource::new(s);
        assert_eq!(src.draw(1).unwrap().labels(), &[1.0]);
        assert!(src.draw(2).is_err());
    }

    #[test]
    fn bad_specs() {
        assert!(parse_synthetic("realizable").is_err());
        assert!(parse_synthetic("synthetic:other").is_err());
        assert!(parse_synthetic("synthetic:realizable:n").is_err());
        assert!(parse_synthetic("synthetic:realizable:q=1").is_err());
    }
}
