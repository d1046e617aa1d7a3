//! Acceptance checks, their instance sources, and the suite runner.

pub mod checks;
pub mod instances;
pub mod sources;
pub mod suite;
pub mod tolerances;

pub use checks::{run_check, CheckKind, CheckOutcome};
pub use sources::{parse_synthetic, FileSource, Recording, SourceKind, SyntheticSource};
pub use suite::{derive_seed, preset, run_suite, CheckSpec, SuiteConfig, SuiteReport, PRESETS};
