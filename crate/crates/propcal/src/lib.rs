//! Fitting logistic propensity score models by calibrated estimation, maximum
//! likelihood, and covariate balancing, with optional Lasso regularization,
//! plus inverse-probability-weighted treatment effect estimation, balance
//! diagnostics, and a Monte Carlo study driver.
//!
//! The entry points mirror a typical analysis:
//!
//! 1. Build a [`data::DesignMatrix`] from a [`data::Dataset`] with
//!    [`data::build_design`] (standardization, interactions, sparsity filter).
//! 2. Fit coefficients with [`solver::fit_unpenalized`] or
//!    [`solver::fit_lasso`]; tune the penalty with
//!    [`tuning::cross_validate`].
//! 3. Estimate means and treatment effects with [`estimators::ipw_means`]
//!    and [`estimators::estimate_att`], and inspect calibration with
//!    [`estimators::std_calibration_diff`].
//!
//! The [`sim`] module generates synthetic datasets on a Kang–Schafer style
//! design and drives repeated-simulation experiments with reproducible,
//! counter-derived seeds.

pub mod data;
pub mod estimators;
pub mod loss;
pub mod sim;
pub mod solver;
pub mod tuning;

mod error;
mod util;

pub use error::{Error, Result};
