pub mod error;
pub mod harness;
pub mod learners;
pub mod model;
pub mod oracle;
pub mod realizable;
pub mod reductions;
pub mod subproblem;
pub mod trainer;

pub use error::{Error, Result};
