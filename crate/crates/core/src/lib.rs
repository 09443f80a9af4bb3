//! Backdoor poisoning of ridge-regularized GLMs on two-class Gaussian mixtures.

// `!(x > 0.0)` is the NaN-rejecting form used throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod erm;
pub mod error;
pub mod fixed_point;
pub mod harness;
pub mod loss;
pub mod metrics;
pub mod population;
pub mod quadrature;
pub mod spectral;
pub mod squared;

pub use error::{Error, Result};
