//! Tensor-level reverse-mode tape.
//!
//! Every operation appends a node holding its forward value and the handles
//! of its operands. [`Tape::backward`] walks the nodes in reverse and
//! accumulates adjoints for every node that (transitively) depends on a
//! variable created with [`Tape::var`]. Constants never receive adjoints.

use crate::error::{Error, Result};
use crate::tensor::{kernels, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// `a (r×k) · bᵀ` with `b` of shape `c×k`.
    MatMulT(Var, Var),
    /// `m (r×c) · v (c)`.
    MatVec(Var, Var),
    /// `a (r×c) +` row vector `b (c)`.
    AddRow(Var, Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Softmax(Var),
    Sum(Var),
    SquaredNorm(Var),
    MeanRows(Var),
    GatherRows(Var, Vec<usize>),
    /// `wᵀ H` for weights `w (n)` and rows `H (n×c)`.
    WeightedRowSum(Var, Var),
    Index(Var, usize),
    CrossEntropy(Var, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// A private recording of one forward evaluation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `var`; zeros when the output does not depend on it.
    pub fn get(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    pub fn take(&mut self, var: Var) -> Tensor {
        match self.grads[var.0].take() {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }
}

fn dims2(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input.
    pub fn var(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A constant; no adjoint is ever computed for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn unary(&mut self, a: Var, value: Tensor, op: Op) -> Var {
        let tracked = self.tracked(a);
        self.push(value, op, tracked)
    }

    fn binary(&mut self, a: Var, b: Var, value: Tensor, op: Op) -> Var {
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(value, op, tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.binary(a, b, value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.binary(a, b, value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).mul(self.value(b))?;
        Ok(self.binary(a, b, value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        self.unary(a, value, Op::Scale(a, c))
    }

    /// `a · bᵀ`, the shape of a dense layer `x Wᵀ` with `W` stored `out×in`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.cols() {
            return Err(Error::shape(
                format!("matrices sharing an inner dimension of {}", av.cols()),
                bv.shape(),
            ));
        }
        let (r, k) = dims2(av);
        let c = bv.rows();
        let data = kernels::matmul_bt(av.data(), bv.data(), r, k, c);
        let value = Tensor::matrix(r, c, data)?;
        Ok(self.binary(a, b, value, Op::MatMulT(a, b)))
    }

    pub fn matvec(&mut self, m: Var, v: Var) -> Result<Var> {
        let (mv, vv) = (self.value(m), self.value(v));
        if mv.rank() != 2 || vv.rank() != 1 {
            return Err(Error::shape("matrix times vector", vv.shape()));
        }
        let value = Tensor::vector(mv.matvec(vv.data())?);
        Ok(self.binary(m, v, value, Op::MatVec(m, v)))
    }

    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 1 || av.cols() != bv.len() {
            return Err(Error::shape(format!("row vector of length {}", av.cols()), bv.shape()));
        }
        let c = av.cols();
        let mut data = av.data().to_vec();
        for row in data.chunks_mut(c) {
            for (x, y) in row.iter_mut().zip(bv.data()) {
                *x += y;
            }
        }
        let value = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.binary(a, b, value, Op::AddRow(a, b)))
    }

    /// Rectifier; the subgradient at exactly zero is zero.
    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| if v > 0.0 { v } else { 0.0 });
        self.unary(a, value, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.unary(a, value, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        self.unary(a, value, Op::Exp(a))
    }

    /// Softmax over all elements, stabilised by subtracting the maximum.
    pub fn softmax(&mut self, a: Var) -> Var {
        let value = softmax(self.value(a));
        self.unary(a, value, Op::Softmax(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.unary(a, value, Op::Sum(a))
    }

    pub fn squared_norm(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).squared_norm());
        self.unary(a, value, Op::SquaredNorm(a))
    }

    /// Column means of a matrix.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let (r, c) = dims2(av);
        if r == 0 {
            return Err(Error::EmptyBag);
        }
        let mut out = vec![0.0; c];
        for i in 0..r {
            for (o, x) in out.iter_mut().zip(av.row(i)) {
                *o += x;
            }
        }
        for o in &mut out {
            *o /= r as f64;
        }
        Ok(self.unary(a, Tensor::vector(out), Op::MeanRows(a)))
    }

    /// Rows of `a` in the order given by `index`.
    pub fn gather_rows(&mut self, a: Var, index: Vec<usize>) -> Result<Var> {
        let av = self.value(a);
        let (r, c) = dims2(av);
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in &index {
            if i >= r {
                return Err(Error::Contract(format!("row {} out of range for {} rows", i, r)));
            }
            data.extend_from_slice(av.row(i));
        }
        let value = Tensor::matrix(index.len(), c, data)?;
        Ok(self.unary(a, value, Op::GatherRows(a, index)))
    }

    /// `Σ_k w_k · H_k`, accumulated in row order.
    pub fn weighted_row_sum(&mut self, w: Var, h: Var) -> Result<Var> {
        let (wv, hv) = (self.value(w), self.value(h));
        if hv.rank() != 2 || wv.len() != hv.rows() {
            return Err(Error::shape(format!("{} weights", hv.rows()), wv.shape()));
        }
        let c = hv.cols();
        let mut out = vec![0.0; c];
        for (k, &wk) in wv.data().iter().enumerate() {
            for (o, x) in out.iter_mut().zip(hv.row(k)) {
                *o += wk * x;
            }
        }
        Ok(self.binary(w, h, Tensor::vector(out), Op::WeightedRowSum(w, h)))
    }

    /// Element `i` of the flattened tensor, as a scalar.
    pub fn index(&mut self, a: Var, i: usize) -> Result<Var> {
        let av = self.value(a);
        if i >= av.len() {
            return Err(Error::Contract(format!(
                "component {} out of range for {} outputs",
                i,
                av.len()
            )));
        }
        let value = Tensor::scalar(av.data()[i]);
        Ok(self.unary(a, value, Op::Index(a, i)))
    }

    /// Negative log-likelihood of `label` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let lv = self.value(logits);
        if label >= lv.len() {
            return Err(Error::Contract(format!("label {} out of range", label)));
        }
        let max = lv.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + lv.data().iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let value = Tensor::scalar(lse - lv.data()[label]);
        Ok(self.unary(logits, value, Op::CrossEntropy(logits, label)))
    }

    /// Reverse sweep from a single-valued `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if !out.is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                out.shape()
            )));
        }
        let n = output.0 + 1;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::filled(out.shape(), 1.0));

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.tracked {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(&node.op, &node.value, &g, &mut grads)?;
            grads[i] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.tracked(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, op: &Op, value: &Tensor, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                if self.tracked(*a) {
                    self.accumulate(grads, *a, g.mul(self.value(*b))?);
                }
                if self.tracked(*b) {
                    self.accumulate(grads, *b, g.mul(self.value(*a))?);
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.scale(*c)),
            Op::MatMulT(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (r, k) = dims2(av);
                let c = bv.rows();
                if self.tracked(*a) {
                    // dA = G · B
                    let d = kernels::matmul(g.data(), bv.data(), r, c, k);
                    self.accumulate(grads, *a, Tensor::matrix(r, k, d)?);
                }
                if self.tracked(*b) {
                    // dB = Gᵀ · A
                    let d = kernels::matmul_at(g.data(), av.data(), r, c, k);
                    self.accumulate(grads, *b, Tensor::matrix(c, k, d)?);
                }
            }
            Op::MatVec(m, v) => {
                let (mv, vv) = (self.value(*m), self.value(*v));
                let (r, c) = dims2(mv);
                if self.tracked(*m) {
                    let mut d = vec![0.0; r * c];
                    for (i, gi) in g.data().iter().enumerate() {
                        for (j, vj) in vv.data().iter().enumerate() {
                            d[i * c + j] = gi * vj;
                        }
                    }
                    self.accumulate(grads, *m, Tensor::matrix(r, c, d)?);
                }
                if self.tracked(*v) {
                    let d = kernels::matmul_at(mv.data(), g.data(), r, c, 1);
                    self.accumulate(grads, *v, Tensor::vector(d));
                }
            }
            Op::AddRow(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.tracked(*b) {
                    let c = g.cols();
                    let mut d = vec![0.0; c];
                    for row in g.data().chunks(c) {
                        for (o, x) in d.iter_mut().zip(row) {
                            *o += x;
                        }
                    }
                    self.accumulate(grads, *b, Tensor::vector(d));
                }
            }
            Op::Relu(a) => {
                let d = g.zip_map(self.value(*a), |gi, x| if x > 0.0 { gi } else { 0.0 })?;
                self.accumulate(grads, *a, d);
            }
            Op::Tanh(a) => {
                let d = g.zip_map(value, |gi, y| gi * (1.0 - y * y))?;
                self.accumulate(grads, *a, d);
            }
            Op::Exp(a) => self.accumulate(grads, *a, g.mul(value)?),
            Op::Softmax(a) => {
                let gy: f64 = kernels::dot(g.data(), value.data());
                let d = g.zip_map(value, |gi, y| y * (gi - gy))?;
                self.accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                let s = g.data()[0];
                self.accumulate(grads, *a, Tensor::filled(self.value(*a).shape(), s));
            }
            Op::SquaredNorm(a) => {
                let s = g.data()[0];
                self.accumulate(grads, *a, self.value(*a).scale(2.0 * s));
            }
            Op::MeanRows(a) => {
                let av = self.value(*a);
                let (r, _) = dims2(av);
                let row: Vec<f64> = g.data().iter().map(|x| x / r as f64).collect();
                let mut d = Vec::with_capacity(av.len());
                for _ in 0..r {
                    d.extend_from_slice(&row);
                }
                self.accumulate(grads, *a, Tensor::new(av.shape().to_vec(), d)?);
            }
            Op::GatherRows(a, index) => {
                let av = self.value(*a);
                let c = av.cols();
                let mut d = Tensor::zeros(av.shape());
                let dd = d.data_mut();
                for (out_row, &src) in index.iter().enumerate() {
                    for j in 0..c {
                        dd[src * c + j] += g.data()[out_row * c + j];
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::WeightedRowSum(w, h) => {
                let (wv, hv) = (self.value(*w), self.value(*h));
                let c = hv.cols();
                if self.tracked(*w) {
                    let d: Vec<f64> = (0..hv.rows()).map(|k| kernels::dot(hv.row(k), g.data())).collect();
                    self.accumulate(grads, *w, Tensor::new(wv.shape().to_vec(), d)?);
                }
                if self.tracked(*h) {
                    let mut d = Vec::with_capacity(hv.len());
                    for &wk in wv.data() {
                        d.extend(g.data().iter().take(c).map(|gj| wk * gj));
                    }
                    self.accumulate(grads, *h, Tensor::new(hv.shape().to_vec(), d)?);
                }
            }
            Op::Index(a, i) => {
                let mut d = Tensor::zeros(self.value(*a).shape());
                d.data_mut()[*i] = g.data()[0];
                self.accumulate(grads, *a, d);
            }
            Op::CrossEntropy(a, label) => {
                let s = g.data()[0];
                let mut p = softmax(self.value(*a));
                p.data_mut()[*label] -= 1.0;
                self.accumulate(grads, *a, p.scale(s));
            }
        }
        Ok(())
    }
}

/// Max-subtracted softmax over every element of `t`.
pub fn softmax(t: &Tensor) -> Tensor {
    let max = t.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = t.data().iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Tensor::new(t.shape().to_vec(), exps.into_iter().map(|e| e / total).collect()).expect("shape preserved")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_rule() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::scalar(3.0));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(tape.value(y).item().unwrap(), 9.0);
        assert_eq!(g.get(x).item().unwrap(), 6.0);
    }

    #[test]
    fn inner_product_gradient() {
        let mut tape = Tape::new();
        let z = tape.var(Tensor::vector(vec![1.0, 2.0]));
        let y = tape.squared_norm(z);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(z).data(), &[2.0, 4.0]);
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let mut tape = Tape::new();
        let z = tape.var(Tensor::vector(vec![1.0, 2.0]));
        let y = tape.relu(z);
        assert!(matches!(tape.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn relu_kink_has_zero_subgradient() {
        let mut tape = Tape::new();
        let z = tape.var(Tensor::vector(vec![0.0, -1.0, 2.0]));
        let r = tape.relu(z);
        let s = tape.sum(r);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(z).data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn constants_receive_no_adjoint() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::vector(vec![1.0, 1.0]));
        let x = tape.var(Tensor::vector(vec![2.0, 3.0]));
        let p = tape.mul(c, x).unwrap();
        let s = tape.sum(p);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).data(), &[1.0, 1.0]);
        assert_eq!(g.get(c).data(), &[0.0, 0.0]);
    }

    #[test]
    fn gather_scatters_back() {
        let mut tape = Tape::new();
        let x = tape.var(Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap());
        let g = tape.gather_rows(x, vec![1, 1, 0]).unwrap();
        let s = tape.sum(g);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(x).data(), &[1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn cross_entropy_matches_softmax_residual() {
        let mut tape = Tape::new();
        let l = tape.var(Tensor::vector(vec![1.0, 3.0]));
        let ce = tape.cross_entropy(l, 1).unwrap();
        let expected = (1.0f64 + (-2.0f64).exp()).ln();
        assert!((tape.value(ce).item().unwrap() - expected).abs() < 1e-15);
        let g = tape.backward(ce).unwrap().get(l);
        let p1 = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((g.data()[1] - (p1 - 1.0)).abs() < 1e-15);
        assert!((g.data()[0] - (1.0 - p1)).abs() < 1e-15);
    }
}
