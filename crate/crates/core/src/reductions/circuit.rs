use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{brute_force_guard, index_map, unit, PredictedOptimum, ReductionInstance, ReductionSource};
use crate::error::{invalid, Result};
use crate::model::{ReluNet, SampleSet, Sign};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateKind {
    #[serde(rename = "OR")]
    Or,
    #[serde(rename = "AND")]
    And,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gate {
    #[serde(rename = "type")]
    pub kind: GateKind,
    pub inputs: Vec<usize>,
    pub output: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct CircuitRepr {
    wires: Vec<usize>,
    inputs: Vec<usize>,
    output: usize,
    gates: Vec<Gate>,
}

/// Monotone circuit netlist. Heights are computed on construction: inputs
/// have height 0 and a gate output sits one above its highest input.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "CircuitRepr", into = "CircuitRepr")]
pub struct MonotoneCircuit {
    wires: Vec<usize>,
    inputs: Vec<usize>,
    output: usize,
    gates: Vec<Gate>,
    heights: BTreeMap<usize, usize>,
    /// Gate indices ordered by output height.
    order: Vec<usize>,
}

impl TryFrom<CircuitRepr> for MonotoneCircuit {
    type Error = crate::Error;

    fn try_from(r: CircuitRepr) -> Result<Self> {
        MonotoneCircuit::new(r.wires, r.inputs, r.output, r.gates)
    }
}

impl From<MonotoneCircuit> for CircuitRepr {
    fn from(c: MonotoneCircuit) -> Self {
        Self {
            wires: c.wires,
            inputs: c.inputs,
            output: c.output,
            gates: c.gates,
        }
    }
}

impl MonotoneCircuit {
    pub fn new(wires: Vec<usize>, inputs: Vec<usize>, output: usize, gates: Vec<Gate>) -> Result<Self> {
        let wire_set: BTreeSet<usize> = wires.iter().copied().collect();
        if wire_set.len() != wires.len() {
            return Err(invalid("wire ids must be distinct"));
        }
        let known = |w: usize, what: &str| -> Result<()> {
            if wire_set.contains(&w) {
                Ok(())
            } else {
                Err(invalid(format!("{what} refers to unknown wire {w}")))
            }
        };
        let input_set: BTreeSet<usize> = inputs.iter().copied().collect();
        if input_set.len() != inputs.len() {
            return Err(invalid("input wires must be distinct"));
        }
        for &i in &inputs {
            known(i, "input list")?;
        }
        known(output, "output")?;

        let mut driver: BTreeMap<usize, usize> = BTreeMap::new();
        for (g, gate) in gates.iter().enumerate() {
            if gate.inputs.is_empty() {
                return Err(invalid(format!("gate {g} has no inputs")));
            }
            for &i in &gate.inputs {
                known(i, &format!("gate {g}"))?;
            }
            known(gate.output, &format!("gate {g}"))?;
            if input_set.contains(&gate.output) {
                return Err(invalid(format!("gate {g} drives input wire {}", gate.output)));
            }
            if driver.insert(gate.output, g).is_some() {
                return Err(invalid(format!("wire {} is driven by two gates", gate.output)));
            }
        }
        if let Some(w) = wires
            .iter()
            .find(|w| !input_set.contains(w) && !driver.contains_key(w))
        {
            return Err(invalid(format!("wire {w} is neither an input nor a gate output")));
        }

        // Heights by repeated relaxation; a cycle leaves some wire unresolved.
        let mut heights: BTreeMap<usize, usize> = inputs.iter().map(|&i| (i, 0)).collect();
        let mut pending: Vec<usize> = (0..gates.len()).collect();
        let mut order = Vec::with_capacity(gates.len());
        while !pending.is_empty() {
            let before = pending.len();
            pending.retain(|&g| {
                let hs: Option<Vec<usize>> =
                    gates[g].inputs.iter().map(|i| heights.get(i).copied()).collect();
                match hs {
                    Some(hs) => {
                        let h = 1 + hs.into_iter().max().expect("gate has inputs");
                        heights.insert(gates[g].output, h);
                        order.push(g);
                        false
                    }
                    None => true,
                }
            });
            if pending.len() == before {
                return Err(invalid("the circuit contains a cycle"));
            }
        }
        order.sort_by_key(|&g| heights[&gates[g].output]);

        Ok(Self {
            wires,
            inputs,
            output,
            gates,
            heights,
            order,
        })
    }

    pub fn wires(&self) -> &[usize] {
        &self.wires
    }

    pub fn inputs(&self) -> &[usize] {
        &self.inputs
    }

    pub fn output(&self) -> usize {
        self.output
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    /// `|C|`, the number of wires.
    pub fn size(&self) -> usize {
        self.wires.len()
    }

    pub fn height(&self, wire: usize) -> Option<usize> {
        self.heights.get(&wire).copied()
    }

    /// `ℓ`, the height of the output wire.
    pub fn depth(&self) -> usize {
        self.heights[&self.output]
    }

    /// `1 / (10|C|)^{ℓ+1}`.
    pub fn epsilon(&self) -> f64 {
        (10.0 * self.size() as f64).powi(self.depth() as i32 + 1).recip()
    }

    /// Value of every wire when exactly `true_inputs` are TRUE.
    pub fn evaluate(&self, true_inputs: &[usize]) -> Result<BTreeMap<usize, bool>> {
        if let Some(w) = true_inputs.iter().find(|w| !self.inputs.contains(w)) {
            return Err(invalid(format!("wire {w} is not an input")));
        }
        let mut value: BTreeMap<usize, bool> = self
            .inputs
            .iter()
            .map(|&i| (i, true_inputs.contains(&i)))
            .collect();
        for &g in &self.order {
            let gate = &self.gates[g];
            let mut ins = gate.inputs.iter().map(|i| value[i]);
            let v = match gate.kind {
                GateKind::Or => ins.any(|b| b),
                GateKind::And => ins.all(|b| b),
            };
            value.insert(gate.output, v);
        }
        Ok(value)
    }

    /// Coordinate of each wire: wires in increasing id order.
    fn coordinates(&self) -> BTreeMap<usize, usize> {
        let mut ids = self.wires.clone();
        ids.sort_unstable();
        ids.into_iter().enumerate().map(|(c, w)| (w, c)).collect()
    }
}

/// Output value for the given TRUE inputs.
pub fn eval_circuit(c: &MonotoneCircuit, true_inputs: &[usize]) -> Result<bool> {
    Ok(c.evaluate(true_inputs)?[&c.output])
}

/// Fewest TRUE inputs that satisfy the circuit, by exhaustive search.
pub fn brute_force_mmcs(c: &MonotoneCircuit) -> Result<usize> {
    let n = c.inputs.len();
    brute_force_guard(n, "MMCS")?;
    let mut best: Option<usize> = None;
    for mask in 0u64..1 << n {
        let size = mask.count_ones() as usize;
        if best.is_some_and(|b| size >= b) {
            continue;
        }
        let chosen: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| c.inputs[i]).collect();
        if eval_circuit(c, &chosen)? {
            best = Some(size);
        }
    }
    best.ok_or_else(|| invalid("the circuit is not satisfiable"))
}

/// Single-unit instance whose minimum squared error is `opt · ε²` with
/// `ε = 1/(10|C|)^{ℓ+1}`.
///
/// Coordinates: one per wire (increasing id), then `w_ε`, then (with bias)
/// one dummy. Samples: `w_ε` (label ε); `w_ε − wᵢ` per input (label ε); the
/// output wire (label 1); `wⱼ − Σ wᵢ` per OR gate and `wⱼ − wᵢ` per AND input
/// (label 0). The bias variant adds `0`, `e_d`, `2e_d` with labels 0, 1, 2.
pub fn gen_mmcs(c: &MonotoneCircuit, with_bias: bool) -> Result<ReductionInstance> {
    let coord = c.coordinates();
    let size = c.size();
    let we = size;
    let n = size + 1 + usize::from(with_bias);
    let eps = c.epsilon();

    let mut points = Vec::new();
    let mut labels = Vec::new();
    points.push(unit(n, we, 1.0));
    labels.push(eps);
    for i in &c.inputs {
        let mut x = unit(n, we, 1.0);
        x[coord[i]] -= 1.0;
        points.push(x);
        labels.push(eps);
    }
    points.push(unit(n, coord[&c.output], 1.0));
    labels.push(1.0);
    for gate in &c.gates {
        match gate.kind {
            GateKind::Or => {
                let mut x = unit(n, coord[&gate.output], 1.0);
                for i in &gate.inputs {
                    x[coord[i]] -= 1.0;
                }
                points.push(x);
                labels.push(0.0);
            }
            GateKind::And => {
                for i in &gate.inputs {
                    let mut x = unit(n, coord[&gate.output], 1.0);
                    x[coord[i]] -= 1.0;
                    points.push(x);
                    labels.push(0.0);
                }
            }
        }
    }
    if with_bias {
        for (scale, label) in [(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)] {
            points.push(unit(n, size + 1, scale));
            labels.push(label);
        }
    }

    let mut names: Vec<String> = coord.keys().map(|w| format!("w{w}")).collect();
    names.push("w_eps".into());
    if with_bias {
        names.push("v_dummy".into());
    }
    let opt = if c.inputs.len() <= super::BRUTE_FORCE_MAX_BITS {
        brute_force_mmcs(c).ok()
    } else {
        None
    };
    Ok(ReductionInstance {
        source: ReductionSource::Mmcs(c.clone()),
        with_bias,
        units: 1,
        epsilon: Some(eps),
        predicted_optimum: PredictedOptimum::EpsilonSquaredTimesOpt {
            epsilon_sq: eps * eps,
            opt,
        },
        variable_index_map: index_map(names),
        samples: SampleSet::with_dim(n, points, labels)?,
    })
}

/// Net with `wⱼ = 1` on TRUE wires, 0 on FALSE wires, `w_ε = ε`, dummy 1,
/// bias 0. Its loss is `|true_inputs| · ε²`.
pub fn mmcs_witness(c: &MonotoneCircuit, true_inputs: &[usize], with_bias: bool) -> Result<ReluNet> {
    let value = c.evaluate(true_inputs)?;
    if !value[&c.output] {
        return Err(invalid("the inputs do not satisfy the circuit"));
    }
    let coord = c.coordinates();
    let mut w = vec![0.0; c.size() + 1 + usize::from(with_bias)];
    for (wire, &v) in &value {
        if v {
            w[coord[wire]] = 1.0;
        }
    }
    w[c.size()] = c.epsilon();
    if with_bias {
        w[c.size() + 1] = 1.0;
    }
    ReluNet::new(vec![Sign::Plus], vec![w], vec![0.0])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeightViolation {
    pub wire: usize,
    pub height: usize,
    pub weight: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeightReport {
    /// Inputs with `wᵢ ≥ w_ε`, the rounding that defines the assignment.
    pub true_inputs: Vec<usize>,
    pub satisfied: bool,
    pub violations: Vec<HeightViolation>,
}

impl HeightReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Rounds `net` to an input assignment (`wᵢ ≥ w_ε` means TRUE) and checks
/// `wⱼ ≤ (2|C|)^h · (ε + c√δ)` for every FALSE wire `j` at height `h`, with
/// `c = 1`, or `c = 3` for the bias-gadget layout (detected from the net's
/// dimension).
pub fn height_bound_check(c: &MonotoneCircuit, net: &ReluNet, delta: f64) -> Result<HeightReport> {
    let size = c.size();
    let dim = net.n().unwrap_or(0);
    if net.k() != 1 || (dim != size + 1 && dim != size + 2) {
        return Err(crate::Error::DimensionMismatch {
            expected: size + 1,
            got: dim,
        });
    }
    let with_bias = dim == size + 2;
    let w = &net.weights()[0];
    let coord = c.coordinates();
    let w_eps = w[size];
    let true_inputs: Vec<usize> = c
        .inputs
        .iter()
        .copied()
        .filter(|i| w[coord[i]] >= w_eps)
        .collect();
    let value = c.evaluate(&true_inputs)?;

    let root = if with_bias { 3.0 } else { 1.0 } * delta.max(0.0).sqrt();
    let base = 2.0 * size as f64;
    let mut violations = Vec::new();
    for (&wire, &v) in &value {
        if v {
            continue;
        }
        let height = c.heights[&wire];
        let bound = base.powi(height as i32) * (c.epsilon() + root);
        let weight = w[coord[&wire]];
        if weight > bound * (1.0 + 1e-9) + 1e-15 {
            violations.push(HeightViolation {
                wire,
                height,
                weight,
                bound,
            });
        }
    }
    Ok(HeightReport {
        satisfied: value[&c.output],
        true_inputs,
        violations,
    })
}
