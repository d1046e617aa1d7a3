//! Core data types: labeled samples, sum-of-ReLU networks, activation
//! patterns, and the loss functionals used throughout the crate.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Error, Result};

/// Slack allowed on norm checks (`‖x‖ ≤ 1`, `|b| ≤ 1`) to absorb rounding.
pub const NORM_SLACK: f64 = 1e-12;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `[z]₊ = max(0, z)`.
#[inline]
pub fn relu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        0.0
    }
}

/// A labeled training set of `m` points in `ℝⁿ`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    n: usize,
    points: Vec<Vec<f64>>,
    labels: Vec<f64>,
    unit_ball: bool,
}

impl SampleSet {
    /// Builds a sample set, inferring `n` from the first point.
    pub fn new(points: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        let n = points
            .first()
            .map(Vec::len)
            .ok_or_else(|| invalid("cannot infer dimension from an empty sample set"))?;
        Self::with_dim(n, points, labels)
    }

    pub fn with_dim(n: usize, points: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(invalid("sample dimension must be at least 1"));
        }
        if points.len() != labels.len() {
            return Err(invalid(format!(
                "{} points but {} labels",
                points.len(),
                labels.len()
            )));
        }
        for p in &points {
            if p.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: p.len(),
                });
            }
        }
        if points.iter().flatten().chain(&labels).any(|v| !v.is_finite()) {
            return Err(invalid("sample values must be finite"));
        }
        Ok(Self {
            n,
            points,
            labels,
            unit_ball: false,
        })
    }

    /// Sets the unit-ball flag; fails if any point has norm above one.
    pub fn with_unit_ball(mut self, flag: bool) -> Result<Self> {
        if flag {
            if let Some((i, p)) = self
                .points
                .iter()
                .enumerate()
                .find(|(_, p)| norm(p) > 1.0 + NORM_SLACK)
            {
                return Err(invalid(format!(
                    "point {i} has norm {} > 1 but the unit-ball flag is set",
                    norm(p)
                )));
            }
        }
        self.unit_ball = flag;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn unit_ball(&self) -> bool {
        self.unit_ball
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.points
            .iter()
            .map(Vec::as_slice)
            .zip(self.labels.iter().copied())
    }

    /// The first `m` samples (or all of them if fewer).
    pub fn truncated(&self, m: usize) -> SampleSet {
        let m = m.min(self.m());
        SampleSet {
            n: self.n,
            points: self.points[..m].to_vec(),
            labels: self.labels[..m].to_vec(),
            unit_ball: self.unit_ball,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Writes `n` feature columns `x1..xn` followed by a `y` column.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (1..=self.n).map(|i| format!("x{i}")).collect();
        header.push("y".into());
        wtr.write_record(&header)?;
        for (p, y) in self.iter() {
            let row: Vec<String> = p.iter().chain([&y]).map(|v| format!("{v:?}")).collect();
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads a CSV with a header row; the last column is the label.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let cols = rdr.headers()?.len();
        if cols < 2 {
            return Err(invalid("CSV needs at least one feature column and a label column"));
        }
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let vals = rec
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| invalid(format!("bad CSV number: {e}")))?;
            let (y, x) = vals.split_last().expect("record has at least two fields");
            points.push(x.to_vec());
            labels.push(*y);
        }
        Self::with_dim(cols - 1, points, labels)
    }

    /// Loads a sample set from JSON or CSV (by extension). A JSON file that
    /// holds a `samples` field (a generated reduction instance) is accepted too.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let is_csv = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        if is_csv {
            return Self::read_csv(std::fs::File::open(path)?);
        }
        let text = std::fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        match value.get("samples") {
            Some(inner) => Ok(serde_json::from_value(inner.clone())?),
            None => Ok(serde_json::from_value(value)?),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
        {
            self.write_csv(std::fs::File::create(path)?)
        } else {
            std::fs::write(path, self.to_json()? + "\n")?;
            Ok(())
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SampleSetRepr {
    n: usize,
    m: usize,
    points: Vec<Vec<f64>>,
    labels: Vec<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    unit_ball: bool,
}

impl Serialize for SampleSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SampleSetRepr {
            n: self.n,
            m: self.m(),
            points: self.points.clone(),
            labels: self.labels.clone(),
            unit_ball: self.unit_ball,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SampleSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = SampleSetRepr::deserialize(d)?;
        if r.m != r.labels.len() || r.m != r.points.len() {
            return Err(D::Error::custom(format!(
                "m = {} disagrees with {} points / {} labels",
                r.m,
                r.points.len(),
                r.labels.len()
            )));
        }
        SampleSet::with_dim(r.n, r.points, r.labels)
            .and_then(|s| s.with_unit_ball(r.unit_ball))
            .map_err(D::Error::custom)
    }
}

/// Output coefficient of a unit, restricted to ±1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn from_value(v: f64) -> Result<Self> {
        if v == 1.0 {
            Ok(Sign::Plus)
        } else if v == -1.0 {
            Ok(Sign::Minus)
        } else {
            Err(invalid(format!("coefficient must be +1 or -1, got {v}")))
        }
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::Plus => "+1",
            Sign::Minus => "-1",
        })
    }
}

impl Serialize for Sign {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_i8(match self {
            Sign::Plus => 1,
            Sign::Minus => -1,
        })
    }
}

impl<'de> Deserialize<'de> for Sign {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let v = f64::deserialize(d)?;
        Sign::from_value(v).map_err(D::Error::custom)
    }
}

/// Parses `+1,-1,...` into a sign vector.
pub fn parse_signs(s: &str) -> Result<Vec<Sign>> {
    s.split(',')
        .map(|t| {
            let v: f64 = t
                .trim()
                .parse()
                .map_err(|_| invalid(format!("bad coefficient {t:?}")))?;
            Sign::from_value(v)
        })
        .collect()
}

/// A depth-2 network `x ↦ Σⱼ αⱼ [⟨wʲ, x⟩ + bⱼ]₊`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReluNet {
    alphas: Vec<Sign>,
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
}

impl ReluNet {
    pub fn new(alphas: Vec<Sign>, weights: Vec<Vec<f64>>, biases: Vec<f64>) -> Result<Self> {
        let k = alphas.len();
        if weights.len() != k || biases.len() != k {
            return Err(invalid(format!(
                "{} coefficients, {} weight vectors, {} biases",
                k,
                weights.len(),
                biases.len()
            )));
        }
        if let Some(first) = weights.first() {
            let n = first.len();
            if let Some(w) = weights.iter().find(|w| w.len() != n) {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: w.len(),
                });
            }
        }
        if weights.iter().flatten().chain(&biases).any(|v| !v.is_finite()) {
            return Err(invalid("network parameters must be finite"));
        }
        Ok(Self {
            alphas,
            weights,
            biases,
        })
    }

    /// Builds a member of the normalized class: `‖wʲ‖ ≤ 1`, `bⱼ ∈ [-1, 1]`.
    pub fn normalized(alphas: Vec<Sign>, weights: Vec<Vec<f64>>, biases: Vec<f64>) -> Result<Self> {
        let net = Self::new(alphas, weights, biases)?;
        if !net.is_normalized() {
            return Err(invalid("network violates ‖w‖ ≤ 1, |b| ≤ 1"));
        }
        Ok(net)
    }

    /// The network with no units; evaluates to zero everywhere.
    pub fn empty() -> Self {
        Self {
            alphas: vec![],
            weights: vec![],
            biases: vec![],
        }
    }

    pub fn zeros(alphas: Vec<Sign>, n: usize) -> Self {
        let k = alphas.len();
        Self {
            alphas,
            weights: vec![vec![0.0; n]; k],
            biases: vec![0.0; k],
        }
    }

    pub fn k(&self) -> usize {
        self.alphas.len()
    }

    /// Input dimension, or `None` for the empty network.
    pub fn n(&self) -> Option<usize> {
        self.weights.first().map(Vec::len)
    }

    pub fn alphas(&self) -> &[Sign] {
        &self.alphas
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn biases_mut(&mut self) -> &mut [f64] {
        &mut self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.weights
    }

    pub fn all_positive(&self) -> bool {
        self.alphas.iter().all(|&a| a == Sign::Plus)
    }

    pub fn is_normalized(&self) -> bool {
        self.weights.iter().all(|w| norm(w) <= 1.0 + NORM_SLACK)
            && self.biases.iter().all(|b| b.abs() <= 1.0 + NORM_SLACK)
    }

    /// Affine pre-activation `⟨wʲ, x⟩ + bⱼ` of unit `j`.
    pub fn affine(&self, j: usize, x: &[f64]) -> f64 {
        dot(&self.weights[j], x) + self.biases[j]
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        match self.n() {
            Some(n) if n != x.len() => Err(Error::DimensionMismatch {
                expected: n,
                got: x.len(),
            }),
            _ => Ok(()),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        // A serialized TrainResult carries the network under `net`.
        match value.get("net") {
            Some(inner) => Ok(serde_json::from_value(inner.clone())?),
            None => Ok(serde_json::from_value(value)?),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ReluNetRepr {
    k: usize,
    alphas: Vec<Sign>,
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
}

impl Serialize for ReluNet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ReluNetRepr {
            k: self.k(),
            alphas: self.alphas.clone(),
            weights: self.weights.clone(),
            biases: self.biases.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ReluNet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = ReluNetRepr::deserialize(d)?;
        if r.k != r.alphas.len() {
            return Err(D::Error::custom(format!(
                "k = {} but {} coefficients",
                r.k,
                r.alphas.len()
            )));
        }
        ReluNet::new(r.alphas, r.weights, r.biases).map_err(D::Error::custom)
    }
}

/// Which unit is constrained active at which sample: `bits[j][i]` is true
/// when unit `j` must satisfy `⟨wʲ, xᵢ⟩ + bⱼ ≥ 0`, false when `≤ 0`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActivationPattern {
    bits: Vec<Vec<bool>>,
}

impl ActivationPattern {
    pub fn new(bits: Vec<Vec<bool>>) -> Result<Self> {
        if let Some(first) = bits.first() {
            if bits.iter().any(|r| r.len() != first.len()) {
                return Err(invalid("activation pattern rows differ in length"));
            }
        }
        Ok(Self { bits })
    }

    pub fn all_inactive(k: usize, m: usize) -> Self {
        Self {
            bits: vec![vec![false; m]; k],
        }
    }

    /// The pattern induced by a network: active wherever the affine value is ≥ 0.
    pub fn of_net(net: &ReluNet, samples: &SampleSet) -> Self {
        let bits = (0..net.k())
            .map(|j| samples.points().iter().map(|x| net.affine(j, x) >= 0.0).collect())
            .collect();
        Self { bits }
    }

    pub fn k(&self) -> usize {
        self.bits.len()
    }

    pub fn m(&self) -> usize {
        self.bits.first().map_or(0, Vec::len)
    }

    pub fn get(&self, unit: usize, sample: usize) -> bool {
        self.bits[unit][sample]
    }

    pub fn set(&mut self, unit: usize, sample: usize, active: bool) {
        self.bits[unit][sample] = active;
    }

    pub fn rows(&self) -> &[Vec<bool>] {
        &self.bits
    }

    /// Bits in enumeration order: sample-major, unit-minor.
    pub fn enumeration_key(&self) -> Vec<bool> {
        let (k, m) = (self.k(), self.m());
        let mut key = Vec::with_capacity(k * m);
        for i in 0..m {
            for j in 0..k {
                key.push(self.bits[j][i]);
            }
        }
        key
    }
}

/// `[⟨w, x⟩ + b]₊`.
pub fn eval_unit(w: &[f64], b: f64, x: &[f64]) -> Result<f64> {
    if w.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: w.len(),
            got: x.len(),
        });
    }
    Ok(relu(dot(w, x) + b))
}

/// `Σⱼ αⱼ [⟨wʲ, x⟩ + bⱼ]₊`.
pub fn eval_net(net: &ReluNet, x: &[f64]) -> Result<f64> {
    net.check_dim(x)?;
    Ok(eval_net_unchecked(net, x))
}

pub(crate) fn eval_net_unchecked(net: &ReluNet, x: &[f64]) -> f64 {
    (0..net.k())
        .map(|j| net.alphas[j].value() * relu(net.affine(j, x)))
        .sum()
}

fn check_net_samples(net: &ReluNet, s: &SampleSet) -> Result<()> {
    match net.n() {
        Some(n) if n != s.n() => Err(Error::DimensionMismatch {
            expected: n,
            got: s.n(),
        }),
        _ => Ok(()),
    }
}

/// `Σᵢ (f(xᵢ) − yᵢ)²`.
pub fn squared_loss(net: &ReluNet, s: &SampleSet) -> Result<f64> {
    check_net_samples(net, s)?;
    Ok(s.iter()
        .map(|(x, y)| {
            let r = eval_net_unchecked(net, x) - y;
            r * r
        })
        .sum())
}

/// Mean of the γ-continuous false-positive loss: zero on nonzero labels,
/// and on zero labels `0`, `f/γ` or `1` as `f ≤ 0`, `0 < f < γ`, `f ≥ γ`.
pub fn gamma_cont_loss(net: &ReluNet, s: &SampleSet, gamma: f64) -> Result<f64> {
    if gamma.is_nan() || gamma <= 0.0 {
        return Err(invalid(format!("gamma must be positive, got {gamma}")));
    }
    check_net_samples(net, s)?;
    if s.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = s
        .iter()
        .filter(|&(_, y)| y == 0.0)
        .map(|(x, _)| {
            let f = eval_net_unchecked(net, x);
            if f <= 0.0 {
                0.0
            } else if f < gamma {
                f / gamma
            } else {
                1.0
            }
        })
        .sum();
    Ok(total / s.m() as f64)
}

/// Fraction of samples with `yᵢ = 0` and `f(xᵢ) > 0` (strict, no tolerance).
pub fn false_positive_rate(net: &ReluNet, s: &SampleSet) -> Result<f64> {
    if s.is_empty() {
        return Err(invalid("false positive rate of an empty sample set"));
    }
    check_net_samples(net, s)?;
    let count = s
        .iter()
        .filter(|&(x, y)| y == 0.0 && eval_net_unchecked(net, x) > 0.0)
        .count();
    Ok(count as f64 / s.m() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn plus(k: usize) -> Vec<Sign> {
        vec![Sign::Plus; k]
    }

    #[test]
    fn eval_unit_examples() {
        assert_eq!(eval_unit(&[1.0], 0.0, &[-3.0]).unwrap(), 0.0);
        assert_eq!(eval_unit(&[1.0], 0.0, &[1.0]).unwrap(), 1.0);
        let v = eval_unit(&[0.6, 0.8], -0.5, &[0.6, 0.8]).unwrap();
        assert!((v - 0.5).abs() < 1e-15);
        assert!(matches!(
            eval_unit(&[1.0], 0.0, &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn eval_net_examples() {
        assert_eq!(eval_net(&ReluNet::empty(), &[3.0, -1.0]).unwrap(), 0.0);

        // Two-unit witness shape on the dummy coordinate: v¹ = 1, v² = 3.
        let net = ReluNet::new(
            plus(2),
            vec![vec![1.0, -1.0, 1.0], vec![-1.0, 1.0, 3.0]],
            vec![0.0, 0.0],
        )
        .unwrap();
        assert_eq!(eval_net(&net, &[0.0, 0.0, 1.0]).unwrap(), 4.0);

        let cancel =
            ReluNet::new(vec![Sign::Plus, Sign::Minus], vec![vec![1.0], vec![1.0]], vec![0.0, 0.0])
                .unwrap();
        assert_eq!(eval_net(&cancel, &[5.0]).unwrap(), 0.0);
        assert!(eval_net(&cancel, &[5.0, 1.0]).is_err());
    }

    #[test]
    fn squared_loss_examples() {
        let net = ReluNet::new(plus(1), vec![vec![1.0]], vec![0.0]).unwrap();
        let empty = SampleSet::with_dim(1, vec![], vec![]).unwrap();
        assert_eq!(squared_loss(&net, &empty).unwrap(), 0.0);
        let s = SampleSet::new(vec![vec![1.0], vec![-1.0]], vec![2.0, 0.0]).unwrap();
        assert_eq!(squared_loss(&net, &s).unwrap(), 1.0);
    }

    #[test]
    fn gamma_cont_examples() {
        let net = ReluNet::new(plus(1), vec![vec![1.0]], vec![0.0]).unwrap();
        let g = 0.2;
        let nonzero = SampleSet::new(vec![vec![1.0]], vec![3.0]).unwrap();
        assert_eq!(gamma_cont_loss(&net, &nonzero, g).unwrap(), 0.0);
        let half = SampleSet::new(vec![vec![g / 2.0]], vec![0.0]).unwrap();
        assert!((gamma_cont_loss(&net, &half, g).unwrap() - 0.5).abs() < 1e-15);
        let over = SampleSet::new(vec![vec![2.0 * g]], vec![0.0]).unwrap();
        assert_eq!(gamma_cont_loss(&net, &over, g).unwrap(), 1.0);
        assert!(gamma_cont_loss(&net, &over, 0.0).is_err());
        assert!(gamma_cont_loss(&net, &over, -1.0).is_err());
    }

    #[test]
    fn false_positive_examples() {
        let net = ReluNet::new(plus(1), vec![vec![1.0]], vec![0.0]).unwrap();
        let none = SampleSet::new(vec![vec![1.0], vec![2.0]], vec![1.0, 2.0]).unwrap();
        assert_eq!(false_positive_rate(&net, &none).unwrap(), 0.0);
        let s = SampleSet::new(
            vec![vec![1.0], vec![-1.0], vec![2.0], vec![0.5]],
            vec![0.0, 0.0, 2.0, 0.5],
        )
        .unwrap();
        assert_eq!(false_positive_rate(&net, &s).unwrap(), 0.25);
        let empty = SampleSet::with_dim(1, vec![], vec![]).unwrap();
        assert!(false_positive_rate(&net, &empty).is_err());
    }

    #[test]
    fn sample_set_validation() {
        assert!(SampleSet::new(vec![vec![1.0], vec![1.0, 2.0]], vec![0.0, 0.0]).is_err());
        assert!(SampleSet::new(vec![vec![1.0]], vec![0.0, 1.0]).is_err());
        assert!(SampleSet::with_dim(0, vec![], vec![]).is_err());
        let s = SampleSet::new(vec![vec![0.6, 0.8], vec![1.0, 1.0]], vec![0.0, 0.0]).unwrap();
        assert!(s.clone().with_unit_ball(true).is_err());
        assert!(s.truncated(1).with_unit_ball(true).is_ok());
    }

    #[test]
    fn sample_set_json_schema() {
        let s = SampleSet::new(vec![vec![1.0, 2.0]], vec![0.5]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&s.to_json().unwrap()).unwrap();
        assert_eq!(v["n"], 2);
        assert_eq!(v["m"], 1);
        assert_eq!(v["points"][0][1], 2.0);
        assert_eq!(v["labels"][0], 0.5);
        let bad = r#"{"n": 1, "m": 2, "points": [[1.0]], "labels": [1.0]}"#;
        assert!(SampleSet::from_json(bad).is_err());
    }

    #[test]
    fn csv_requires_header_and_label() {
        let s = SampleSet::new(vec![vec![0.1, -2.5], vec![3.0, 0.0]], vec![1.0, 0.0]).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x1,x2,y\n"));
        assert_eq!(SampleSet::read_csv(buf.as_slice()).unwrap(), s);
        assert!(SampleSet::read_csv("y\n1.0\n".as_bytes()).is_err());
    }

    #[test]
    fn net_json_schema_and_validation() {
        let net = ReluNet::new(
            vec![Sign::Plus, Sign::Minus],
            vec![vec![0.5, 0.0], vec![0.0, -1.0]],
            vec![0.1, 0.0],
        )
        .unwrap();
        let v: serde_json::Value = serde_json::from_str(&net.to_json().unwrap()).unwrap();
        assert_eq!(v["k"], 2);
        assert_eq!(v["alphas"], serde_json::json!([1, -1]));
        assert_eq!(ReluNet::from_json(&net.to_json().unwrap()).unwrap(), net);
        let bad_alpha = r#"{"k":1,"alphas":[0.5],"weights":[[1.0]],"biases":[0.0]}"#;
        assert!(ReluNet::from_json(bad_alpha).is_err());
        assert!(ReluNet::new(plus(2), vec![vec![1.0], vec![1.0, 2.0]], vec![0.0, 0.0]).is_err());
        assert!(ReluNet::normalized(plus(1), vec![vec![1.0, 1.0]], vec![0.0]).is_err());
        assert!(ReluNet::normalized(plus(1), vec![vec![0.6, 0.8]], vec![-1.0]).is_ok());
    }

    #[test]
    fn pattern_of_net_and_key_order() {
        let net = ReluNet::new(plus(2), vec![vec![1.0], vec![-1.0]], vec![0.0, 0.0]).unwrap();
        let s = SampleSet::new(vec![vec![1.0], vec![-2.0]], vec![0.0, 0.0]).unwrap();
        let p = ActivationPattern::of_net(&net, &s);
        assert_eq!(p.rows(), &[vec![true, false], vec![false, true]]);
        assert_eq!(p.enumeration_key(), vec![true, false, false, true]);
    }

    fn unit_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-1.0f64..1.0, dim).prop_map(|v| {
            let n = norm(&v);
            if n > 1.0 {
                v.iter().map(|x| x / n).collect()
            } else {
                v
            }
        })
    }

    proptest! {
        #[test]
        fn positive_nets_on_unit_ball_stay_in_range(
            k in 1usize..4,
            params in prop::collection::vec((unit_vec(3), -1.0f64..1.0), 4),
            x in unit_vec(3),
        ) {
            let (weights, biases): (Vec<_>, Vec<_>) = params.into_iter().take(k).unzip();
            let net = ReluNet::normalized(plus(k), weights, biases).unwrap();
            let v = eval_net(&net, &x).unwrap();
            prop_assert!(v >= 0.0);
            prop_assert!(v <= 2.0 * k as f64 + 1e-12);
        }

        #[test]
        fn gamma_cont_is_nonincreasing_in_gamma(
            w in -2.0f64..2.0, b in -1.0f64..1.0,
            xs in prop::collection::vec(-1.0f64..1.0, 1..8),
            g1 in 0.01f64..1.0, dg in 0.0f64..1.0,
        ) {
            let net = ReluNet::new(plus(1), vec![vec![w]], vec![b]).unwrap();
            let m = xs.len();
            let s = SampleSet::new(xs.into_iter().map(|x| vec![x]).collect(), vec![0.0; m]).unwrap();
            let a = gamma_cont_loss(&net, &s, g1).unwrap();
            let c = gamma_cont_loss(&net, &s, g1 + dg).unwrap();
            prop_assert!(c <= a + 1e-15);
        }

        #[test]
        fn zero_loss_iff_interpolation(
            w in -2.0f64..2.0, b in -1.0f64..1.0,
            xs in prop::collection::vec(-1.0f64..1.0, 1..8),
            perturb in prop::option::of(0usize..8),
        ) {
            let net = ReluNet::new(plus(1), vec![vec![w]], vec![b]).unwrap();
            let mut labels: Vec<f64> = xs.iter().map(|&x| relu(w * x + b)).collect();
            if let Some(i) = perturb {
                let i = i % labels.len();
                labels[i] += 0.5;
            }
            let s = SampleSet::new(xs.into_iter().map(|x| vec![x]).collect(), labels).unwrap();
            let loss = squared_loss(&net, &s).unwrap();
            let fits = s.iter().all(|(x, y)| (eval_net(&net, x).unwrap() - y).abs() <= 1e-9);
            prop_assert_eq!(loss <= 1e-18, fits);
        }
    }
}
