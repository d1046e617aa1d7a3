//! Pass/fail thresholds of the acceptance checks.

use std::time::Duration;

/// Largest residual of a returned single-ReLU fit.
pub const REALIZABLE_RESIDUAL: f64 = 1e-6;
pub const REALIZABLE_TIME: Duration = Duration::from_secs(1);

/// Trainer error may exceed the grid minimum by at most this much.
pub const GRID_SLACK: f64 = 1e-6;
pub const GRID_TOTAL_TIME: Duration = Duration::from_secs(300);

/// Reduction identities hold to `REDUCTION_ABS + β`.
pub const REDUCTION_ABS: f64 = 1e-9;
/// Witness losses match their closed form to this absolute error.
pub const WITNESS_ABS: f64 = 1e-12;

/// Error threshold separating zero-error 3SAT instances from the rest.
pub const SAT_ZERO: f64 = 1e-6;
/// Largest bias magnitude allowed in zero-error bias-gadget solutions.
pub const BIAS_ZERO: f64 = 1e-6;

/// Relative float slack on the `k·γ` shift bound.
pub const SHIFT_FLOAT_SLACK: f64 = 1e-12;

pub const LEARNING_TIME: Duration = Duration::from_secs(600);

pub const BOUND_FORMULA: f64 = 1e-12;
