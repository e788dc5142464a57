//! Configuration, command dispatch and artifact emission for the dispersal
//! simulator, plus the epsilon-sweep comparison.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod converge;
pub mod error;
pub mod output;

pub use error::{HarnessError, Result};
