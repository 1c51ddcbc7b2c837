//! Moving horizon estimation for joint state and time-varying parameter
//! estimation, with observability-adaptive prior updates.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: system maps `f`, `g`, `h`, constraint boxes, truth simulation.
//! - [`certificates`]: detectability / parameter-growth certificates and sampled checks.
//! - [`solver`]: projected Levenberg-Marquardt for box-constrained least squares.
//! - [`mhe`]: the estimator (window cost, solves, prior update rule).
//! - [`monitor`]: discounted observability Gramian along the estimated window.
//! - [`analysis`]: stability constants, horizon partitions and inequality audits.
//! - [`harness`]: disturbances, experiments, run records, plots and config presets.

pub mod analysis;
pub mod certificates;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod mhe;
pub mod model;
pub mod monitor;
pub mod solver;

pub use error::{MheError, Result};
