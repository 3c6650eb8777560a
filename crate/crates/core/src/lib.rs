//! Unbiased least squares from i.i.d. samples augmented with volume-rescaled points.
//!
//! The crate is organised bottom-up: dense kernels in [`linalg`], distributions
//! and label oracles in [`data`], finite volume sampling in [`volume`], samplers
//! for the rescaled law `VS^k` in [`rescaled`], the estimators in [`estimator`],
//! the convergence experiment in [`experiment`] and a self-check suite in
//! [`validation`].

pub mod data;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod linalg;
pub mod rescaled;
pub mod validation;
pub mod volume;

pub use data::{LabelOracle, PointDistribution, RngState, SimRng};
pub use error::{Error, Result};
pub use linalg::{PointMatrix, PsdMatrix, Vector};
