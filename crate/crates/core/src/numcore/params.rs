use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::rng::Rng;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Flat registry of named trainable tensors.
///
/// Every parameter appears once; its position is the index used by
/// [`Tape::param`] and by the gradient vectors returned from a backward pass.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor and returns its index. Panics on a duplicate name.
    pub fn register(&mut self, name: impl Into<String>, value: Matrix) -> usize {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Matrix] {
        &mut self.values
    }

    pub fn get(&self, index: usize) -> &Matrix {
        &self.values[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn by_name(&self, name: &str) -> Option<&Matrix> {
        self.index_of(name).map(|i| &self.values[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.index_of(name).map(move |i| &mut self.values[i])
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.values.iter().map(Matrix::shape).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    /// Records parameter `index` on the tape.
    pub fn leaf(&self, tape: &mut Tape, index: usize) -> Var {
        tape.param(index, &self.values[index])
    }

    /// Concatenation of all tensors in registry order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for v in &self.values {
            out.extend_from_slice(v.data());
        }
        out
    }

    /// Inverse of [`ParamSet::flatten`].
    pub fn restore(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::Dimension(format!(
                "restore: registry holds {} scalars, got {}",
                self.num_scalars(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for v in &mut self.values {
            let n = v.len();
            v.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    /// Checks that `other` has the same names and shapes.
    pub fn check_compatible(&self, other: &ParamSet) -> Result<()> {
        if self.names != other.names || self.shapes() != other.shapes() {
            return Err(Error::Config(format!(
                "parameter layouts differ ({} vs {} tensors, {} vs {} scalars)",
                self.len(),
                other.len(),
                self.num_scalars(),
                other.num_scalars()
            )));
        }
        Ok(())
    }

    pub fn norms(&self) -> Vec<(String, f64)> {
        self.names.iter().zip(&self.values).map(|(n, v)| (n.clone(), v.norm_sq().sqrt())).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(Matrix::is_finite)
    }
}

/// Glorot-uniform matrix: entries in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_init(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Matrix {
    assert!(fan_in >= 1 && fan_out >= 1, "glorot_init needs positive fans");
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out).map(|_| rng.uniform_range(-bound, bound)).collect();
    Matrix::from_vec(fan_in, fan_out, data).expect("shape is consistent by construction")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glorot_bounds_and_determinism() {
        let a = glorot_init(3, 3, &mut Rng::new(11));
        assert!(a.data().iter().all(|v| v.abs() <= 1.0));
        assert_eq!(a, glorot_init(3, 3, &mut Rng::new(11)));
    }

    #[test]
    fn glorot_mean_near_zero() {
        // fan sum 6: bound 1, 10^4 samples.
        let m = glorot_init(2, 5000, &mut Rng::new(5));
        let mean = m.sum() / m.len() as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn flatten_restore_roundtrip() {
        let mut p = ParamSet::new();
        p.register("a", Matrix::from_rows(&[vec![1.0, 2.0]]));
        p.register("b", Matrix::column(&[3.0, 4.0, 5.0]));
        let flat = p.flatten();
        let mut q = p.clone();
        q.values_mut()[0].data_mut()[0] = 99.0;
        q.restore(&flat).unwrap();
        assert_eq!(p, q);
        assert!(q.restore(&flat[1..]).is_err());
    }
}
