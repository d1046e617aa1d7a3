//! Acceptance gate. Criteria 1 to 8 share one run of the `acceptance`
//! preset; criterion 9 runs every preset again on a different thread count
//! and compares the JSON reports byte for byte.

use std::sync::OnceLock;

use relu_exact::harness::{run_suite, SuiteConfig, SuiteReport, PRESETS};

const SEED: u64 = 2024;

fn report(preset: &str) -> SuiteReport {
    run_suite(&SuiteConfig::from_preset(preset, SEED).unwrap()).unwrap()
}

fn acceptance() -> &'static (SuiteReport, String) {
    static RUN: OnceLock<(SuiteReport, String)> = OnceLock::new();
    RUN.get_or_init(|| {
        let r = report("acceptance");
        let json = r.to_json().unwrap();
        (r, json)
    })
}

fn criterion(number: usize) {
    let (r, _) = acceptance();
    let prefix = format!("{number}-");
    let c = r
        .checks
        .iter()
        .find(|c| c.id.starts_with(&prefix))
        .unwrap_or_else(|| panic!("no check for criterion {number}"));
    let tag = if c.passed { "PASS" } else { "FAIL" };
    println!("criterion {number} {}: {tag} ({})", c.kind, c.summary);
    assert!(c.passed, "criterion {number} failed: {}", serde_json::to_string(&c.details).unwrap());
}

#[test]
fn criterion_1_realizable_roundtrip() {
    criterion(1);
}

#[test]
fn criterion_2_trainer_matches_grid_oracle() {
    criterion(2);
}

#[test]
fn criterion_3_setcover_identity() {
    criterion(3);
}

#[test]
fn criterion_4_sat_dichotomy() {
    criterion(4);
}

#[test]
fn criterion_5_mmcs_identity() {
    criterion(5);
}

#[test]
fn criterion_6_reliable_mechanics() {
    criterion(6);
}

#[test]
fn criterion_7_scaled_learning() {
    criterion(7);
}

#[test]
fn criterion_8_bound_formulas() {
    criterion(8);
}

#[test]
fn criterion_9_reports_are_reproducible() {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(2).build().unwrap();
    let mut mismatched = Vec::new();
    for preset in PRESETS {
        let again = pool.install(|| report(preset)).to_json().unwrap();
        let first = if preset == "acceptance" {
            acceptance().1.clone()
        } else {
            report(preset).to_json().unwrap()
        };
        if first != again {
            mismatched.push(preset);
        }
    }
    let tag = if mismatched.is_empty() { "PASS" } else { "FAIL" };
    println!(
        "criterion 9 determinism: {tag} ({} of {} preset reports identical across reruns)",
        PRESETS.len() - mismatched.len(),
        PRESETS.len()
    );
    assert!(mismatched.is_empty(), "reports differ for {mismatched:?}");
}
