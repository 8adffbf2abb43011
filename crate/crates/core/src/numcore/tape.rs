//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every primitive in insertion order; a node's inputs
//! always precede it, so a single reverse sweep from a scalar root yields
//! every adjoint. Leaves created with [`Tape::param`] are tagged with their
//! index in a parameter registry so gradients come back keyed by that index.

use std::sync::Arc;

use super::matrix::{gemm_acc, Matrix};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    /// Block-diagonal product with constant blocks (one adjacency per graph).
    BlockMatMul(Arc<Vec<Arc<Matrix>>>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Concat(Var, Var),
    RowSum(Var),
    Mean(Var),
    Square(Var),
    /// Column standardization; caches `1/sqrt(var + eps)` per column.
    Standardize(Var, Vec<f64>),
    /// Multiplication by a constant mask (dropout).
    Mask(Var, Matrix),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Matrix,
}

/// Single-writer record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Matrix>>,
    params: Vec<(usize, Var)>,
}

impl Gradients {
    /// Adjoint of a leaf node (zero matrix if the root does not depend on it).
    /// Interior adjoints are released during the sweep.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Matrix {
        match &self.adjoints[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = tape.value(v).shape();
                Matrix::zeros(r, c)
            }
        }
    }

    /// Gradients for registry parameters `0..shapes.len()`, summed over every
    /// leaf that refers to the same parameter. Unused parameters get zeros.
    pub fn params(&self, shapes: &[(usize, usize)]) -> Vec<Matrix> {
        let mut out: Vec<Matrix> = shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect();
        for &(idx, var) in &self.params {
            if let Some(g) = &self.adjoints[var.0] {
                out[idx].add_assign(g);
            }
        }
        out
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    /// Drops all recorded nodes so the tape can record a fresh forward pass.
    pub fn reset(&mut self) {
        self.nodes.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Op::Constant, value)
    }

    /// Leaf bound to parameter `index` of a registry.
    pub fn param(&mut self, index: usize, value: &Matrix) -> Var {
        self.push(Op::Param(index), value.clone())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), value))
    }

    /// Multiplies consecutive row blocks of `x` by the matching constant block.
    pub fn block_matmul(&mut self, blocks: Arc<Vec<Arc<Matrix>>>, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let total: usize = blocks.iter().map(|b| b.rows()).sum();
        if total != xv.rows() {
            return Err(Error::Dimension(format!(
                "block_matmul: blocks cover {total} rows, input is {}x{}",
                xv.rows(),
                xv.cols()
            )));
        }
        let mut out = Matrix::zeros(xv.rows(), xv.cols());
        let mut offset = 0;
        for b in blocks.iter() {
            if b.rows() != b.cols() {
                return Err(Error::Dimension(format!("block_matmul: block {}x{} is not square", b.rows(), b.cols())));
            }
            let slab = xv.rows_slice(offset, b.rows());
            gemm_acc(b, &slab, out.data_mut(), offset);
            offset += b.rows();
        }
        Ok(self.push(Op::BlockMatMul(blocks, x), out))
    }

    fn binary_same(&mut self, a: Var, b: Var, name: &str) -> Result<()> {
        self.value(a).check_same_shape(self.value(b), name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same(a, b, "add")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(Op::Add(a, b), value))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same(a, b, "sub")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(Op::Sub(a, b), value))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same(a, b, "mul")?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(Op::Mul(a, b), value))
    }

    fn check_row(&self, x: Var, row: Var, name: &str) -> Result<()> {
        let (xr, xc) = self.value(x).shape();
        let (rr, rc) = self.value(row).shape();
        if rr != 1 || rc != xc {
            return Err(Error::Dimension(format!("{name}: cannot broadcast {rr}x{rc} over {xr}x{xc}")));
        }
        Ok(())
    }

    /// `x + 1·row` (bias broadcast over rows).
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.check_row(x, row, "add_row")?;
        let mut value = self.value(x).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..value.rows() {
            for (v, b) in value.row_mut(i).iter_mut().zip(&r) {
                *v += b;
            }
        }
        Ok(self.push(Op::AddRow(x, row), value))
    }

    /// `x ⊙ 1·row` (per-column scale).
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        self.check_row(x, row, "mul_row")?;
        let mut value = self.value(x).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..value.rows() {
            for (v, s) in value.row_mut(i).iter_mut().zip(&r) {
                *v *= s;
            }
        }
        Ok(self.push(Op::MulRow(x, row), value))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let value = self.value(x).scale(s);
        self.push(Op::Scale(x, s), value)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > 0.0 || v.is_nan() { v } else { 0.0 });
        self.push(Op::Relu(x), value)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.push(Op::Sigmoid(x), value)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        self.push(Op::Tanh(x), value)
    }

    /// Horizontal concatenation `[a | b]`.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hcat(self.value(b))?;
        Ok(self.push(Op::Concat(a, b), value))
    }

    /// Horizontal concatenation of several nodes, left to right.
    pub fn concat_all(&mut self, parts: &[Var]) -> Result<Var> {
        let (&first, rest) = parts.split_first().ok_or_else(|| Error::Contract("concat_all of zero inputs".into()))?;
        rest.iter().try_fold(first, |acc, &p| self.concat(acc, p))
    }

    /// Per-row sum, giving a column vector.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let sums: Vec<f64> = (0..xv.rows()).map(|r| xv.row(r).iter().sum()).collect();
        self.push(Op::RowSum(x), Matrix::column(&sums))
    }

    /// Mean of all entries (1x1).
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.is_empty() {
            return Err(Error::Contract("mean of an empty matrix".into()));
        }
        let m = xv.sum() / xv.len() as f64;
        Ok(self.push(Op::Mean(x), Matrix::scalar(m)))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * v);
        self.push(Op::Square(x), value)
    }

    /// Normalizes every column to zero mean and unit (biased) variance.
    pub fn standardize(&mut self, x: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let (n, c) = xv.shape();
        if n < 2 {
            return Err(Error::Contract(format!("batch normalization needs at least 2 rows, got {n}")));
        }
        let (mean, var) = column_moments(xv);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut value = Matrix::zeros(n, c);
        for r in 0..n {
            let src = xv.row(r);
            for (k, dst) in value.row_mut(r).iter_mut().enumerate() {
                *dst = (src[k] - mean[k]) * inv_std[k];
            }
        }
        Ok(self.push(Op::Standardize(x, inv_std), value))
    }

    /// Elementwise product with a constant mask.
    pub fn mask(&mut self, x: Var, mask: Matrix) -> Result<Var> {
        self.value(x).check_same_shape(&mask, "mask")?;
        let value = self.value(x).zip_map(&mask, |a, m| a * m);
        Ok(self.push(Op::Mask(x, mask), value))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let (r, c) = self.value(root).shape();
        if (r, c) != (1, 1) {
            return Err(Error::Contract(format!("backward root must be 1x1, got {r}x{c}")));
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        adj[root.0] = Some(Matrix::scalar(1.0));
        let mut params = Vec::new();

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if let Op::Param(p) = node.op {
                params.push((p, Var(idx)));
            }
            if matches!(node.op, Op::Constant | Op::Param(_)) {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            let out = &node.value;
            match &node.op {
                Op::Constant | Op::Param(_) => {}
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    accumulate(&mut adj, *a, g.matmul_t(bv));
                    accumulate(&mut adj, *b, av.t_matmul(&g));
                }
                Op::BlockMatMul(blocks, x) => {
                    let mut dx = Matrix::zeros(g.rows(), g.cols());
                    let mut offset = 0;
                    for b in blocks.iter() {
                        let slab = g.rows_slice(offset, b.rows());
                        let part = b.t_matmul(&slab);
                        let n = g.cols();
                        dx.data_mut()[offset * n..(offset + b.rows()) * n].copy_from_slice(part.data());
                        offset += b.rows();
                    }
                    accumulate(&mut adj, *x, dx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, *a, g.clone());
                    accumulate(&mut adj, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, *b, g.scale(-1.0));
                    accumulate(&mut adj, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    accumulate(&mut adj, *a, ga);
                    accumulate(&mut adj, *b, gb);
                }
                Op::AddRow(x, row) => {
                    accumulate(&mut adj, *row, column_sums(&g));
                    accumulate(&mut adj, *x, g);
                }
                Op::MulRow(x, row) => {
                    let xv = self.value(*x);
                    let rv = self.value(*row).data().to_vec();
                    let mut gx = g.clone();
                    for i in 0..gx.rows() {
                        for (v, s) in gx.row_mut(i).iter_mut().zip(&rv) {
                            *v *= s;
                        }
                    }
                    accumulate(&mut adj, *row, column_sums(&g.zip_map(xv, |a, b| a * b)));
                    accumulate(&mut adj, *x, gx);
                }
                Op::Scale(x, s) => accumulate(&mut adj, *x, g.scale(*s)),
                Op::Relu(x) => {
                    let gx = g.zip_map(out, |gv, y| if y > 0.0 { gv } else { 0.0 });
                    accumulate(&mut adj, *x, gx);
                }
                Op::Sigmoid(x) => {
                    let gx = g.zip_map(out, |gv, y| gv * y * (1.0 - y));
                    accumulate(&mut adj, *x, gx);
                }
                Op::Tanh(x) => {
                    let gx = g.zip_map(out, |gv, y| gv * (1.0 - y * y));
                    accumulate(&mut adj, *x, gx);
                }
                Op::Concat(a, b) => {
                    let ac = self.value(*a).cols();
                    let bc = self.value(*b).cols();
                    accumulate(&mut adj, *a, g.cols_slice(0, ac));
                    accumulate(&mut adj, *b, g.cols_slice(ac, bc));
                }
                Op::RowSum(x) => {
                    let (rows, cols) = self.value(*x).shape();
                    let mut gx = Matrix::zeros(rows, cols);
                    for i in 0..rows {
                        let gi = g.get(i, 0);
                        gx.row_mut(i).iter_mut().for_each(|v| *v = gi);
                    }
                    accumulate(&mut adj, *x, gx);
                }
                Op::Mean(x) => {
                    let (rows, cols) = self.value(*x).shape();
                    let v = g.item() / (rows * cols) as f64;
                    accumulate(&mut adj, *x, Matrix::filled(rows, cols, v));
                }
                Op::Square(x) => {
                    let gx = g.zip_map(self.value(*x), |gv, xv| 2.0 * gv * xv);
                    accumulate(&mut adj, *x, gx);
                }
                Op::Standardize(x, inv_std) => {
                    let (n, c) = out.shape();
                    let nf = n as f64;
                    let sum_g = column_sums(&g);
                    let sum_gy = column_sums(&g.zip_map(out, |a, b| a * b));
                    let mut gx = Matrix::zeros(n, c);
                    for i in 0..n {
                        let gi = g.row(i);
                        let yi = out.row(i);
                        for (k, dst) in gx.row_mut(i).iter_mut().enumerate() {
                            *dst = inv_std[k] / nf * (nf * gi[k] - sum_g.data()[k] - yi[k] * sum_gy.data()[k]);
                        }
                    }
                    accumulate(&mut adj, *x, gx);
                }
                Op::Mask(x, mask) => {
                    accumulate(&mut adj, *x, g.zip_map(mask, |a, m| a * m));
                }
            }
        }
        Ok(Gradients { adjoints: adj, params })
    }
}

fn accumulate(adj: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn column_sums(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(1, m.cols());
    for r in 0..m.rows() {
        for (o, v) in out.data_mut().iter_mut().zip(m.row(r)) {
            *o += v;
        }
    }
    out
}

/// Per-column mean and biased variance.
pub fn column_moments(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let (n, c) = m.shape();
    let nf = n as f64;
    let mut mean = vec![0.0; c];
    for r in 0..n {
        for (acc, v) in mean.iter_mut().zip(m.row(r)) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= nf);
    let mut var = vec![0.0; c];
    for r in 0..n {
        for (k, v) in m.row(r).iter().enumerate() {
            let d = v - mean[k];
            var[k] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= nf);
    (mean, var)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
