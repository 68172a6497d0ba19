//! Dynamic state estimation for linear power-system models under false data
//! injection.
//!
//! The crate simulates a linear time-invariant plant `x(k+1) = A x(k) + w`,
//! `y(k) = C x(k) + v`, forges stealthy sensor attacks against it, and runs
//! estimators that first select a τ-consistent subset of sensors and then
//! filter on it.
//!
//! - [`model`]: plant model, trajectories, model files.
//! - [`linalg`]: eigen/pseudoinverse/Mahalanobis/chi-square primitives.
//! - [`consistency`]: τ-consistency checks and sensor-subset selection.
//! - [`attacks`]: attack vector generators.
//! - [`estimators`]: least squares, Kalman filter, PCNA and CCKF.
//! - [`harness`]: Monte-Carlo RMSE and runtime experiments.

pub mod attacks;
pub mod consistency;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod par;

pub use error::{Error, Result};
pub use par::Execution;
