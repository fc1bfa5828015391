//! Experiment harness for compressed-sensing process tomography.
//!
//! An [`ExperimentSpec`](spec::ExperimentSpec) describes one experiment;
//! [`experiments::run`] executes it and returns a table with one row per
//! (grid point, method), encodable as CSV or JSON.

pub mod error;
pub mod experiments;
pub mod output;
pub mod spec;
pub mod stats;

pub use error::BenchError;
pub use experiments::run;
pub use output::ExperimentResult;
pub use spec::{ExperimentKind, ExperimentSpec};
