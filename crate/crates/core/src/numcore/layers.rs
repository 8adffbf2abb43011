use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::rng::Rng;
use super::tape::{column_moments, Tape, Var};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

/// Running mean/variance of a batch-normalization layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(width: usize) -> Self {
        Self { mean: vec![0.0; width], var: vec![1.0; width] }
    }
}

/// Batch normalization over rows. Train mode standardizes with the batch
/// statistics of every column and folds them into `stats` (momentum 0.1,
/// unbiased variance); eval mode uses `stats` as given.
pub fn batchnorm_apply(
    tape: &mut Tape,
    x: Var,
    gamma: Var,
    beta: Var,
    stats: &mut RunningStats,
    mode: Mode,
) -> Result<Var> {
    let (n, c) = tape.value(x).shape();
    if tape.value(gamma).shape() != (1, c) || tape.value(beta).shape() != (1, c) {
        return Err(Error::Dimension(format!(
            "batchnorm: gamma/beta must be 1x{c}, got {:?} and {:?}",
            tape.value(gamma).shape(),
            tape.value(beta).shape()
        )));
    }
    if stats.mean.len() != c {
        return Err(Error::Dimension(format!(
            "batchnorm: running stats have width {}, input has {c} columns",
            stats.mean.len()
        )));
    }
    let normalized = match mode {
        Mode::Train => {
            if n < 2 {
                return Err(Error::Contract(format!("batchnorm in train mode needs at least 2 rows, got {n}")));
            }
            let (mean, var) = column_moments(tape.value(x));
            let unbias = n as f64 / (n as f64 - 1.0);
            for k in 0..c {
                stats.mean[k] = (1.0 - BN_MOMENTUM) * stats.mean[k] + BN_MOMENTUM * mean[k];
                stats.var[k] = (1.0 - BN_MOMENTUM) * stats.var[k] + BN_MOMENTUM * var[k] * unbias;
            }
            tape.standardize(x, BN_EPS)?
        }
        Mode::Eval => {
            let shift = Matrix::from_vec(1, c, stats.mean.iter().map(|m| -m).collect())?;
            let inv = Matrix::from_vec(1, c, stats.var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect())?;
            let shift = tape.constant(shift);
            let inv = tape.constant(inv);
            let centered = tape.add_row(x, shift)?;
            tape.mul_row(centered, inv)?
        }
    };
    let scaled = tape.mul_row(normalized, gamma)?;
    tape.add_row(scaled, beta)
}

/// Inverted dropout: zero each entry with probability `p` and scale survivors
/// by `1/(1−p)` in train mode; identity in eval mode.
pub fn dropout_apply(tape: &mut Tape, x: Var, p: f64, rng: &mut Rng, mode: Mode) -> Result<Var> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Contract(format!("dropout probability must lie in [0, 1), got {p}")));
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok(x);
    }
    let (r, c) = tape.value(x).shape();
    let keep = 1.0 / (1.0 - p);
    let data = (0..r * c).map(|_| if rng.uniform() < p { 0.0 } else { keep }).collect();
    let mask = Matrix::from_vec(r, c, data)?;
    tape.mask(x, mask)
}
