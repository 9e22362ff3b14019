//! Robust and sparse linear regression based on the γ-divergence.
//!
//! The estimator minimizes the empirical γ-cross entropy of a Gaussian
//! linear model plus an L1 penalty. Minimization uses a
//! majorization-minimization (MM) outer loop whose surrogate is a weighted
//! Lasso problem, solved by coordinate descent with an active-set strategy.
//!
//! Modules:
//!
//! * [`model`]: densities, the empirical γ-cross entropy, MM weights and the
//!   majorizer.
//! * [`solver`]: coordinate updates, the MM loop and KKT certificates.
//! * [`selection`]: λ grids and robust cross-validation (RoCV).
//! * [`init`]: starting points (RANSAC-lite, zero).
//! * [`baselines`]: plain Lasso by coordinate descent.
//! * [`metrics`]: RMSPE, MSE, TPR/TNR, RTMSPE.
//! * [`simulation`]: seeded contamination designs and the experiment runner.
//! * [`divergence`]: quadrature checks of the divergence theory.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod data;
pub mod divergence;
pub mod error;
pub mod init;
pub mod metrics;
pub mod model;
pub mod numeric;
pub mod quadrature;
pub mod selection;
pub mod simulation;
pub mod solver;

pub use data::{Dataset, ModelParams};
pub use error::{Error, Result};
pub use model::{GammaConfig, MmWeights};
pub use solver::{FitConfig, FitResult};

pub use nalgebra::{DMatrix, DVector};
