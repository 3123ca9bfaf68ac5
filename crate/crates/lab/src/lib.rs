//! Everything around `vcore-core` that touches the outside world: dataset
//! and checkpoint files, run configuration, training runs with metrics,
//! sweeps, reports and the estimator check behind the `vcore` binary.

pub mod checkpoint;
pub mod config;
pub mod dataset;
mod error;
pub mod manifest;
pub mod probe_check;
pub mod report;
pub mod run;
pub mod sweep;

pub use error::{Error, Result};
