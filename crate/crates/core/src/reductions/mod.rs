//! Sample-set generators for the hardness reductions from Set Cover, 3SAT and
//! Minimum Monotone Circuit Satisfiability, with witness networks and the
//! exhaustive combinatorial solvers used to predict their optima.

mod circuit;
mod sat;
mod setcover;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::model::{squared_loss, ReluNet, SampleSet};
use crate::trainer::{BiasMode, TrainOptions};

pub use circuit::{
    brute_force_mmcs, eval_circuit, gen_mmcs, height_bound_check, mmcs_witness, Gate, GateKind,
    HeightReport, HeightViolation, MonotoneCircuit,
};
pub use sat::{brute_force_sat, gen_3sat, threesat_witness, CnfFormula};
pub use setcover::{brute_force_setcover, gen_setcover, setcover_witness, SetCoverInstance};

/// Exhaustive searches refuse more than `2^BRUTE_FORCE_MAX_BITS` candidates.
pub const BRUTE_FORCE_MAX_BITS: usize = 20;

fn brute_force_guard(bits: usize, what: &str) -> Result<()> {
    if bits > BRUTE_FORCE_MAX_BITS {
        return Err(crate::Error::BudgetExceeded(format!(
            "{what}: 2^{bits} candidates exceed 2^{BRUTE_FORCE_MAX_BITS}"
        )));
    }
    Ok(())
}

/// The combinatorial problem an instance was generated from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ReductionSource {
    SetCover(SetCoverInstance),
    #[serde(rename = "3sat")]
    ThreeSat(CnfFormula),
    Mmcs(MonotoneCircuit),
}

/// The minimum training error the reduction predicts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum PredictedOptimum {
    /// `ε² · opt`, where `opt` is the combinatorial optimum (minimum cover
    /// size or fewest true inputs), if it was small enough to compute.
    EpsilonSquaredTimesOpt { epsilon_sq: f64, opt: Option<usize> },
    /// Zero exactly when the formula is satisfiable.
    ZeroIffSatisfiable { satisfiable: Option<bool> },
}

impl PredictedOptimum {
    /// The predicted minimum, when known; `None` for an unknown combinatorial
    /// optimum or for the unsatisfiable case (only positivity is predicted).
    pub fn value(&self) -> Option<f64> {
        match self {
            Self::EpsilonSquaredTimesOpt { epsilon_sq, opt } => {
                opt.map(|o| epsilon_sq * o as f64)
            }
            Self::ZeroIffSatisfiable { satisfiable } => match satisfiable {
                Some(true) => Some(0.0),
                _ => None,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReductionInstance {
    pub source: ReductionSource,
    pub with_bias: bool,
    /// Number of units the instance is meant for (all coefficients `+1`).
    pub units: usize,
    /// Gadget parameter ε; absent for 3SAT.
    pub epsilon: Option<f64>,
    pub predicted_optimum: PredictedOptimum,
    /// Coordinate of each named variable in the sample vectors.
    pub variable_index_map: BTreeMap<String, usize>,
    pub samples: SampleSet,
}

impl ReductionInstance {
    /// Runs the generator again on the stored source.
    pub fn regenerate(&self) -> Result<ReductionInstance> {
        match &self.source {
            ReductionSource::SetCover(sc) => gen_setcover(sc, self.with_bias),
            ReductionSource::ThreeSat(f) => gen_3sat(f, self.with_bias),
            ReductionSource::Mmcs(c) => gen_mmcs(c, self.with_bias),
        }
    }

    /// Trainer options matching the instance: `units` positive units, biases
    /// only for the bias-gadget variant, and no pattern budget.
    pub fn train_options(&self) -> TrainOptions {
        TrainOptions::new(self.units)
            .bias(if self.with_bias {
                BiasMode::Free
            } else {
                BiasMode::Zero
            })
            .max_pattern_bits(None)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Loss of a candidate net on an instance, next to the prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub loss: f64,
    pub predicted: Option<f64>,
    /// `loss ≥ predicted − tol` (no net can beat the optimum).
    pub respects_lower_bound: bool,
    pub height_report: Option<HeightReport>,
}

/// Evaluates `net` on the instance. For circuit instances the height bound is
/// checked with `δ` equal to the loss.
pub fn verify(inst: &ReductionInstance, net: &ReluNet, tol: f64) -> Result<VerifyReport> {
    if net.n().is_some_and(|n| n != inst.samples.n()) {
        return Err(invalid(format!(
            "net has dimension {:?}, instance has {}",
            net.n(),
            inst.samples.n()
        )));
    }
    let loss = squared_loss(net, &inst.samples)?;
    let predicted = inst.predicted_optimum.value();
    let height_report = match &inst.source {
        ReductionSource::Mmcs(c) => Some(height_bound_check(c, net, loss)?),
        _ => None,
    };
    Ok(VerifyReport {
        loss,
        predicted,
        respects_lower_bound: predicted.is_none_or(|p| loss >= p - tol),
        height_report,
    })
}

fn index_map(names: impl IntoIterator<Item = String>) -> BTreeMap<String, usize> {
    names.into_iter().enumerate().map(|(i, n)| (n, i)).collect()
}

fn unit(n: usize, i: usize, v: f64) -> Vec<f64> {
    let mut x = vec![0.0; n];
    x[i] = v;
    x
}
