//! Statistical seismology toolkit: magnitude–frequency laws, Omori–Utsu and
//! ETAS clustering models, BPT renewal forecasts with empirical-Bayes
//! priors, multi-precursor probability combination, covariate point-process
//! models and foreshock discrimination.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod aftershock;
pub mod catalog;
pub mod error;
pub mod etas;
pub mod etas_st;
pub mod fit;
pub mod foreshock;
pub mod magnitude;
pub mod numerics;
pub mod precursor;
pub mod renewal;

pub use error::{Error, Result};
pub use fit::FitResult;
