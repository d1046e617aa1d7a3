//! Suite configuration, presets, and reports.
//!
//! A suite file (TOML or JSON) looks like
//!
//! ```toml
//! seed = 7
//! preset = "smoke"            # optional
//!
//! [[check]]
//! id = "grid-small"
//! kind = "trainer-vs-grid"
//! instances = 5               # any parameter of the kind; the rest default
//! ```

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checks::{
    run_check, CheckKind, CheckOutcome, GridParams, LearningParams, MmcsParams, ReliableParams,
    RoundtripParams, SatParams, SetcoverParams, WitnessParams,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckSpec {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(flatten)]
    pub kind: CheckKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, rename = "check")]
    pub checks: Vec<CheckSpec>,
}

pub const PRESETS: [&str; 3] = ["acceptance", "reductions-small", "smoke"];

fn entry(id: &str, kind: CheckKind) -> CheckSpec {
    CheckSpec {
        id: id.to_string(),
        seed: None,
        kind,
    }
}

/// The checks of a named preset.
pub fn preset(name: &str) -> Result<Vec<CheckSpec>> {
    use CheckKind::*;
    let checks = match name {
        "acceptance" => vec![
            entry("1-realizable-roundtrip", RealizableRoundtrip(RoundtripParams::default())),
            entry("2-trainer-vs-grid", TrainerVsGrid(GridParams::default())),
            entry("3-setcover-identity", SetcoverIdentity(SetcoverParams::default())),
            entry("4-sat-dichotomy", SatDichotomy(SatParams::default())),
            entry("5-mmcs-identity", MmcsIdentity(MmcsParams::default())),
            entry("6-reliable-mechanics", ReliableMechanics(ReliableParams::default())),
            entry("7-scaled-learning", ScaledLearning(LearningParams::default())),
            entry("8-bound-formulas", BoundFormulas),
        ],
        "reductions-small" => vec![
            entry(
                "setcover",
                SetcoverIdentity(SetcoverParams {
                    instances: 5,
                    max_universe: 4,
                    max_sets: 4,
                    ..SetcoverParams::default()
                }),
            ),
            entry(
                "sat",
                SatDichotomy(SatParams {
                    instances: 5,
                    max_vars: 3,
                    max_clauses: 5,
                }),
            ),
            entry(
                "mmcs",
                MmcsIdentity(MmcsParams {
                    circuits: 4,
                    ..MmcsParams::default()
                }),
            ),
            entry(
                "witness",
                WitnessLoss(WitnessParams {
                    instances: 5,
                    corrupt: false,
                }),
            ),
        ],
        "smoke" => vec![
            entry(
                "realizable",
                RealizableRoundtrip(RoundtripParams {
                    instances: 10,
                    max_dim: 4,
                    max_samples: 20,
                }),
            ),
            entry(
                "grid",
                TrainerVsGrid(GridParams {
                    instances: 3,
                    max_samples: 3,
                    step: 0.1,
                    ..GridParams::default()
                }),
            ),
            entry("bounds", BoundFormulas),
            entry(
                "witness",
                WitnessLoss(WitnessParams {
                    instances: 3,
                    corrupt: false,
                }),
            ),
        ],
        other => {
            return Err(Error::Config(format!(
                "unknown preset {other:?}; known presets: {}",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(checks)
}

impl SuiteConfig {
    pub fn from_preset(name: &str, seed: u64) -> Result<Self> {
        preset(name)?;
        Ok(Self {
            seed,
            preset: Some(name.to_string()),
            checks: Vec::new(),
        })
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a `.json` file as JSON and anything else as TOML.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json(&text)
        } else {
            Self::from_toml(&text)
        }
    }

    /// Preset checks followed by the explicit ones. Ids must be unique.
    pub fn resolved(&self) -> Result<Vec<CheckSpec>> {
        let mut all = match &self.preset {
            Some(p) => preset(p)?,
            None => Vec::new(),
        };
        all.extend(self.checks.iter().cloned());
        let mut seen = BTreeSet::new();
        for c in &all {
            if !seen.insert(c.id.as_str()) {
                return Err(Error::Config(format!("duplicate check id {:?}", c.id)));
            }
        }
        Ok(all)
    }
}

/// Seed of a check without an explicit one: FNV-1a over the suite seed and
/// the check id.
pub fn derive_seed(suite_seed: u64, id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in suite_seed.to_le_bytes().iter().chain(id.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<CheckOutcome>,
}

impl SuiteReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "{tag} {} [{}]: {}", c.id, c.kind, c.summary);
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        let _ = writeln!(
            out,
            "{} of {} checks passed",
            self.checks.len() - failed,
            self.checks.len()
        );
        out
    }
}

/// Runs every check (in parallel) and returns the report sorted by id.
pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    let checks = cfg.resolved()?;
    let mut outcomes: Vec<CheckOutcome> = checks
        .par_iter()
        .map(|c| {
            let seed = c.seed.unwrap_or_else(|| derive_seed(cfg.seed, &c.id));
            run_check(&c.id, &c.kind, seed)
        })
        .collect();
    outcomes.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(SuiteReport {
        seed: cfg.seed,
        passed: outcomes.iter().all(|c| c.passed),
        checks: outcomes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_config_with_params() {
        let cfg = SuiteConfig::from_toml(
            r#"
            seed = 3
            [[check]]
            id = "g"
            kind = "trainer-vs-grid"
            instances = 2
            [[check]]
            id = "b"
            kind = "bound-formulas"
            seed = 11
            "#,
        )
        .unwrap();
        assert_eq!(cfg.checks.len(), 2);
        match &cfg.checks[0].kind {
            CheckKind::TrainerVsGrid(p) => {
                assert_eq!(p.instances, 2);
                assert_eq!(p.step, 0.05);
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(cfg.checks[1].seed, Some(11));
    }

    #[test]
    fn json_round_trip() {
        let cfg = SuiteConfig {
            seed: 1,
            preset: Some("smoke".into()),
            checks: preset("reductions-small").unwrap(),
        };
        let s = serde_json::to_string(&cfg).unwrap();
        assert_eq!(SuiteConfig::from_json(&s).unwrap(), cfg);
    }

    #[test]
    fn duplicates_and_unknowns_rejected() {
        let mut cfg = SuiteConfig::from_preset("smoke", 0).unwrap();
        cfg.checks.push(entry("bounds", CheckKind::BoundFormulas));
        assert!(cfg.resolved().is_err());
        assert!(preset("nope").is_err());
        assert!(SuiteConfig::from_toml("[[check]]\nid = \"x\"\nkind = \"nope\"").is_err());
    }

    #[test]
    fn empty_suite_passes() {
        let r = run_suite(&SuiteConfig::from_toml("seed = 0").unwrap()).unwrap();
        assert!(r.passed && r.checks.is_empty());
    }

    #[test]
    fn seeds_differ_by_id() {
        assert_ne!(derive_seed(0, "a"), derive_seed(0, "b"));
        assert_ne!(derive_seed(0, "a"), derive_seed(1, "a"));
        assert_eq!(derive_seed(5, "x"), derive_seed(5, "x"));
    }

    #[test]
    fn witness_control_detects_corruption() {
        let good = run_check("w", &CheckKind::WitnessLoss(WitnessParams { instances: 3, corrupt: false }), 1);
        let bad = run_check("w", &CheckKind::WitnessLoss(WitnessParams { instances: 3, corrupt: true }), 1);
        assert!(good.passed, "{}", good.summary);
        assert!(!bad.passed);
    }

    #[test]
    fn bound_formulas_pass() {
        assert!(run_check("b", &CheckKind::BoundFormulas, 0).passed);
    }
}
