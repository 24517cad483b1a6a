//! Representative and predictive PCA (RapPCA) for multivariate spatial data,
//! with classical and predictive PCA baselines, spatial score predictors,
//! evaluation metrics, cross-validated tuning and simulation generators.

pub mod data;
pub mod engines;
pub mod error;
pub mod exec;
pub mod kernels;
pub mod linalg;
pub mod metrics;
pub mod predictors;
pub mod seed;
pub mod simgen;
pub mod splines;
pub mod tuning;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use exec::Execution;
pub use kernels::KernelSpec;
pub use splines::{Lambda, SplineBasis};
