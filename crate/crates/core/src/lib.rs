//! Monte Carlo and control toolkit for systemic risk in interacting banking systems.

// `!(x > 0.0)` is used on purpose so that NaN fails every range check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod control;
pub mod error;
pub mod governance;
pub mod meanfield;
pub mod model;
pub mod output;
pub mod risk;
pub mod sde;
pub mod trajectory;

pub use error::{Error, Result};
