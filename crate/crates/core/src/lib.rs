//! Concomitant estimation of row-sparse multitask regression coefficients under
//! correlated noise observed over repeated measurements.
//!
//! The crate provides the spectral kernels (clipped square roots, Schatten-ball
//! projections, smoothed norms), the block coordinate descent solvers for the
//! concomitant estimator and its competitors, duality-gap certificates, a
//! synthetic data generator and an ROC benchmark harness.

pub mod bench;
pub mod duality;
pub mod error;
pub mod model;
pub mod simulate;
pub mod solvers;
pub mod spectral;

pub use error::{ClarError, Result};
pub use model::{CoStdMatrix, Coefficients, DesignMatrix, RepeatedObservations, SolverConfig};
pub use solvers::{EstimatorKind, SolveOptions, SolveResult};
