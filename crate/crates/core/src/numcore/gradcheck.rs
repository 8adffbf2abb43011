//! Central finite-difference gradient checker.
//!
//! Only forward values are used to build the numeric estimate, so the check
//! is independent of the reverse sweep it validates.

use super::matrix::Matrix;
use super::params::ParamSet;
use super::tape::{Tape, Var};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error and the parameter/entry where it occurred.
    pub max_rel_error: f64,
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    pub nonzero: usize,
}

/// Relative error with a floor so that entries where both estimates vanish
/// are compared absolutely.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares reverse-mode gradients of the scalar built by `forward` against
/// central differences with step `h` for every scalar of every parameter.
/// `forward` must be deterministic (re-seed any dropout inside it).
pub fn check_gradients<F>(params: &ParamSet, h: f64, floor: f64, mut forward: F) -> Result<GradCheckReport>
where
    F: FnMut(&ParamSet, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let root = forward(params, &mut tape)?;
    let analytic: Vec<Matrix> = tape.backward(root)?.params(&params.shapes());

    let mut probe = params.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: None, checked: 0, nonzero: 0 };
    for (pi, grad) in analytic.iter().enumerate() {
        for k in 0..grad.len() {
            let base = probe.values()[pi].data()[k];
            probe.values_mut()[pi].data_mut()[k] = base + h;
            tape.reset();
            let r = forward(&probe, &mut tape)?;
            let up = tape.value(r).item();
            probe.values_mut()[pi].data_mut()[k] = base - h;
            tape.reset();
            let r = forward(&probe, &mut tape)?;
            let down = tape.value(r).item();
            probe.values_mut()[pi].data_mut()[k] = base;

            let numeric = (up - down) / (2.0 * h);
            let a = grad.data()[k];
            let err = relative_error(a, numeric, floor);
            report.checked += 1;
            if a != 0.0 {
                report.nonzero += 1;
            }
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((params.names()[pi].clone(), k));
            }
        }
    }
    Ok(report)
}
