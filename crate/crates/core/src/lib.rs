//! Linear meta-learning with overparameterized representations.
//!
//! The crate covers the whole pipeline on synthetic Gaussian data:
//!
//! * [`datagen`]: representation-learning (phase 1) and few-shot (phase 2) data.
//! * [`estimators`]: moment estimators of `M = Sigma_F Sigma_T Sigma_F`, the
//!   feature covariance and task-average subspaces, plus alignment scores.
//! * [`optrep`]: the optimal eigen-weighting (shrinkage profile `theta`, its
//!   KKT solvers and the lifting back to a `d x R` matrix).
//! * [`interpolator`]: the weighted minimum-norm interpolator and weighted ridge.
//! * [`risk`]: few-shot risk by Monte Carlo, closed-form formulas and the
//!   finite-dimensional distributional characterization.
//! * [`experiments`]: seeded sweep runners and CSV output used by the CLI.

pub mod datagen;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod interpolator;
pub mod linalg;
pub mod optrep;
pub mod rng;
pub mod risk;

pub use error::{Error, Result};
