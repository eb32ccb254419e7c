//! Instrument-free endogeneity correction for linear regressions.
//!
//! The main estimator augments an OLS regression with a rank-based control
//! function: first-stage residuals of each endogenous regressor on the
//! exogenous ones are mapped through their rescaled ranks and the standard
//! normal quantile function, and the resulting normal scores enter the
//! outcome equation as extra regressors.
//!
//! Around it the crate provides an internal-instrument IV representation,
//! comparators (naive OLS, a scores-on-scores two-step copula estimator and a
//! Gaussian-copula likelihood estimator), pairs-bootstrap inference, an
//! exogeneity test, numerical evaluation of the asymptotic covariance, and a
//! Monte Carlo harness for the two standard simulation designs.

// `!(x > 0.0)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod cli;
pub mod copula_mle;
pub mod data;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod numerics;
pub mod regress;
pub mod report;
pub mod simulation;
pub mod transform;

pub use data::{Dataset, ModelSpec};
pub use error::{Error, Result};
pub use estimators::{EstimatorTag, ThetaEstimate, VcovSource};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
