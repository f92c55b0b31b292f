//! Selection of order and method (plug-in or direct) for h-step
//! autoregressive predictors, with the population theory behind it and a
//! Monte Carlo harness.

// `!(x > 0.0)` style guards are used so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ape;
pub mod cli;
pub mod error;
pub mod estimation;
pub mod linalg;
pub mod montecarlo;
pub mod parallel;
pub mod selection;
pub mod theory;

pub use error::{Error, Result};
pub use estimation::{Method, Series};
pub use theory::{ArModel, Loss};
