// SPDX-License-Identifier: MIT OR Apache-2.0

//! Robust tests for parameter change built on the density power divergence (DPD).
//!
//! The crate fits a parametric model (i.i.d. normal or GARCH(p,q)) by minimum
//! density power divergence estimation, forms the score-CUSUM process from the
//! per-observation gradients of the DPD objective at the full-sample estimate
//! and compares its maximal quadratic form against Monte Carlo quantiles of
//! `sup_s |B_d(s)|^2`, the squared norm of a `d`-dimensional Brownian bridge.
//!
//! With `alpha = 0` every piece reduces to the likelihood-based score test;
//! `alpha > 0` bounds the influence of outlying observations.
//!
//! Module map:
//!
//! - [`series`]: observation sequences, file ingestion, log returns.
//! - [`normal`]: DPD loss and derivatives for `N(mu, sigma2)`.
//! - [`garch`]: GARCH variance recursion, DPD loss and derivatives, residuals.
//! - [`fit`]: the MDPD estimator (quasi-Newton with multi-start).
//! - [`test`]: the DPD score-CUSUM test and the residual CUSUM test.
//! - [`critical`]: Brownian-bridge critical values and their on-disk cache.
//! - [`binseg`]: binary segmentation for multiple change points.
//! - [`lab`]: contamination simulators and size/power experiments.
//! - [`forecast`]: one-step-ahead variance forecasts, RMSE and alpha selection.
//! - [`cli`]: the `dpdcp` command-line front end.

// NaN-rejecting guards are written as negated comparisons on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod binseg;
pub mod cli;
pub mod critical;
mod error;
pub mod fit;
pub mod forecast;
pub mod garch;
pub mod lab;
mod linalg;
pub mod model;
pub mod normal;
pub mod optim;
pub mod rng;
pub mod series;

pub use error::{DpdError, Result};
pub use model::{ModelSpec, Params};
pub use series::Series;
