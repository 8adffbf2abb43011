use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Moment accumulators for bias-corrected Adam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    step: u64,
}

impl AdamState {
    pub fn new(shapes: &[(usize, usize)]) -> Self {
        let zeros = || shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect::<Vec<_>>();
        Self { m: zeros(), v: zeros(), step: 0 }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

fn check_shapes(params: &[Matrix], grads: &[Matrix], op: &str) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Dimension(format!("{op}: {} parameters but {} gradients", params.len(), grads.len())));
    }
    for (p, g) in params.iter().zip(grads) {
        p.check_same_shape(g, op)?;
    }
    Ok(())
}

fn check_lr(lr: f64, op: &str) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::Contract(format!("{op}: learning rate must be finite and >= 0, got {lr}")));
    }
    Ok(())
}

pub fn adam_step(params: &mut [Matrix], grads: &[Matrix], state: &mut AdamState, lr: f64) -> Result<()> {
    check_shapes(params, grads, "adam_step")?;
    check_lr(lr, "adam_step")?;
    if state.m.len() != params.len() {
        return Err(Error::Dimension(format!(
            "adam_step: state tracks {} tensors, got {}",
            state.m.len(),
            params.len()
        )));
    }
    for (p, m) in params.iter().zip(&state.m) {
        p.check_same_shape(m, "adam_step state")?;
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
        for ((pv, &gv), (mv, vv)) in it {
            *mv = ADAM_BETA1 * *mv + (1.0 - ADAM_BETA1) * gv;
            *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Plain gradient step `θ ← θ − lr·g`.
pub fn sgd_step(params: &mut [Matrix], grads: &[Matrix], lr: f64) -> Result<()> {
    check_shapes(params, grads, "sgd_step")?;
    check_lr(lr, "sgd_step")?;
    for (p, g) in params.iter_mut().zip(grads) {
        for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv -= lr * gv;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_closed_form() {
        // m̂ = g, v̂ = g², so the first step is lr·g/(|g| + eps).
        let mut p = vec![Matrix::scalar(1.0)];
        let mut st = AdamState::new(&[(1, 1)]);
        adam_step(&mut p, &[Matrix::scalar(0.5)], &mut st, 0.001).unwrap();
        let expected = 1.0 - 0.001 * 0.5 / (0.5 + ADAM_EPS);
        assert!((p[0].item() - expected).abs() < 1e-15);
        assert!((p[0].item() - 0.999).abs() < 1e-6);
        assert_eq!(st.step(), 1);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = vec![Matrix::from_rows(&[vec![1.0, -2.0]])];
        let before = p.clone();
        let mut st = AdamState::new(&[(1, 2)]);
        adam_step(&mut p, &[Matrix::zeros(1, 2)], &mut st, 0.01).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn adam_moves_against_gradient_sign() {
        let mut p = vec![Matrix::from_rows(&[vec![0.0, 0.0]])];
        let g = [Matrix::from_rows(&[vec![0.3, -2.0]])];
        let mut st = AdamState::new(&[(1, 2)]);
        adam_step(&mut p, &g, &mut st, 0.01).unwrap();
        let first = p[0].clone();
        adam_step(&mut p, &g, &mut st, 0.01).unwrap();
        assert!(first.get(0, 0) < 0.0 && p[0].get(0, 0) < first.get(0, 0));
        assert!(first.get(0, 1) > 0.0 && p[0].get(0, 1) > first.get(0, 1));
    }

    #[test]
    fn sgd_on_quadratic() {
        // f(θ) = (θ − 1)², θ = 0 → g = −2.
        let mut p = vec![Matrix::scalar(0.0)];
        sgd_step(&mut p, &[Matrix::scalar(-2.0)], 0.1).unwrap();
        assert!((p[0].item() - 0.2).abs() < 1e-15);
        sgd_step(&mut p, &[Matrix::scalar(0.0)], 0.1).unwrap();
        assert!((p[0].item() - 0.2).abs() < 1e-15);
        sgd_step(&mut p, &[Matrix::scalar(5.0)], 0.0).unwrap();
        assert!((p[0].item() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let mut p = vec![Matrix::zeros(2, 2)];
        assert!(matches!(sgd_step(&mut p, &[Matrix::zeros(1, 2)], 0.1), Err(Error::Dimension(_))));
        let mut st = AdamState::new(&[(2, 2)]);
        assert!(adam_step(&mut p, &[Matrix::zeros(2, 1)], &mut st, 0.1).is_err());
    }
}
