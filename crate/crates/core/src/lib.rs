//! Spectral Galerkin simulation of semilinear stochastic evolution equations
//! with coefficients that are singular at the initial time, together with
//! evaluators for the associated a priori, perturbation and Hölder bounds.

// validation uses `!(x > 0.0)` and friends so that NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod config;
pub mod engine;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod models;
pub mod output;
pub mod special;
pub mod spectral;

pub use error::{Error, Result};
