// `!(x >= 0.0)` style checks reject NaN on purpose; index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod cli;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod graphs;
pub mod meta;
pub mod models;
pub mod numcore;
pub mod train;

pub use error::{Error, Result};
