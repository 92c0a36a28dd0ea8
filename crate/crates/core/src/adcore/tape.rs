//! Wengert-list reverse-mode differentiation over rank-2 tensors.
//!
//! A [`Tape`] lives for one loss evaluation: record the forward pass, call
//! [`Tape::backward`] on a scalar node, and the tape is consumed. Inputs only
//! accumulate gradients when created with [`Tape::leaf`] and
//! `requires_grad = true`; everything created with [`Tape::constant`] is
//! skipped by the backward sweep.

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Min(Var, Var),
    Max(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Elu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    SumCols(Var),
    SumAll(Var),
    MeanAll(Var),
    Concat(Vec<Var>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`. `None` when `v` does not
    /// require gradients or the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Like [`Gradients::get`] but yields zeros of the right shape for
    /// unreachable inputs.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros_like(like))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, op_name: &'static str) -> Result<Var> {
        let value = value.ensure_finite(op_name)?;
        let requires_grad = match &op {
            Op::Input => false,
            Op::MatMul(a, b)
            | Op::AddRow(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Min(a, b)
            | Op::Max(a, b) => self.requires_grad(*a) || self.requires_grad(*b),
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Relu(a)
            | Op::Elu(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::Square(a)
            | Op::Clamp(a, _, _)
            | Op::SumCols(a)
            | Op::SumAll(a)
            | Op::MeanAll(a) => self.requires_grad(*a),
            Op::Concat(parts) => parts.iter().any(|p| self.requires_grad(*p)),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Input node; gradients are tracked iff `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        let v = self.push(value, Op::Input, "leaf")?;
        self.nodes[v.0].requires_grad = requires_grad;
        Ok(v)
    }

    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    /// `x[n, m] + row[1, m]` broadcast over rows.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let out = self.value(x).add_row(self.value(row))?;
        self.push(out, Op::AddRow(x, row), "add_row")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).add(self.value(b))?;
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).sub(self.value(b))?;
        self.push(out, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).mul(self.value(b))?;
        self.push(out, Op::Mul(a, b), "mul")
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "minimum", f64::min)?;
        self.push(out, Op::Min(a, b), "minimum")
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "maximum", f64::max)?;
        self.push(out, Op::Max(a, b), "maximum")
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| -v);
        self.push(out, Op::Neg(a), "neg")
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).scale(c);
        self.push(out, Op::Scale(a, c), "scale")
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v + c);
        self.push(out, Op::AddScalar(a), "add_scalar")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(out, Op::Relu(a), "relu")
    }

    pub fn elu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(elu);
        self.push(out, Op::Elu(a), "elu")
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a), "tanh")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), "sigmoid")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a), "exp")
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Ln(a), "ln")
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| v * v);
        self.push(out, Op::Square(a), "square")
    }

    /// Elementwise clamp; the gradient passes only inside `[lo, hi]`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v.clamp(lo, hi));
        self.push(out, Op::Clamp(a, lo, hi), "clamp")
    }

    /// `[n, m] -> [n, 1]`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).sum_cols();
        self.push(out, Op::SumCols(a), "sum_cols")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::SumAll(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        if self.value(a).is_empty() {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let out = Tensor::scalar(self.value(a).mean());
        self.push(out, Op::MeanAll(a), "mean")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|p| self.value(*p)).collect();
        let out = Tensor::concat_cols(&values)?;
        self.push(out, Op::Concat(parts.to_vec()), "concat_cols")
    }

    /// Reverse sweep from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::InvalidArgument("backward on an empty tape".into()));
        }
        if loss.0 >= self.nodes.len() {
            return Err(Error::InvalidArgument("loss is not on this tape".into()));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss has shape {:?}", self.nodes[loss.0].value.shape()),
            ));
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::new(self.nodes[loss.0].value.shape().to_vec(), vec![1.0])?);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let nodes = &self.nodes;
            let val = |v: Var| &nodes[v.0].value;
            let wants = |v: Var| nodes[v.0].requires_grad;

            match &node.op {
                Op::Input => {
                    grads[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (n, k) = (val(*a).rows(), val(*a).cols());
                    let m = val(*b).cols();
                    if wants(*a) {
                        let mut da = Tensor::zeros(n, k);
                        gemm(n, m, k, g.data(), (m, 1), val(*b).data(), (1, m), da.data_mut(), 0.0);
                        accumulate(&mut grads, *a, da);
                    }
                    if wants(*b) {
                        let mut db = Tensor::zeros(k, m);
                        gemm(k, n, m, val(*a).data(), (1, k), g.data(), (m, 1), db.data_mut(), 0.0);
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::AddRow(x, row) => {
                    if wants(*row) {
                        let (n, m) = (g.rows(), g.cols());
                        let mut col_sums = vec![0.0; m];
                        for r in 0..n {
                            for (s, v) in col_sums.iter_mut().zip(g.row_slice(r)) {
                                *s += v;
                            }
                        }
                        let shaped = Tensor::new(val(*row).shape().to_vec(), col_sums)?;
                        accumulate(&mut grads, *row, shaped);
                    }
                    if wants(*x) {
                        accumulate(&mut grads, *x, g);
                    }
                }
                Op::Add(a, b) => {
                    if wants(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if wants(*b) {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if wants(*a) {
                        accumulate(&mut grads, *a, g.clone());
                    }
                    if wants(*b) {
                        accumulate(&mut grads, *b, g.scale(-1.0));
                    }
                }
                Op::Mul(a, b) => {
                    if wants(*a) {
                        accumulate(&mut grads, *a, g.mul(val(*b))?);
                    }
                    if wants(*b) {
                        accumulate(&mut grads, *b, g.mul(val(*a))?);
                    }
                }
                Op::Min(a, b) | Op::Max(a, b) => {
                    let pick_min = matches!(node.op, Op::Min(..));
                    let (va, vb) = (val(*a), val(*b));
                    let to_a: Vec<bool> = va
                        .data()
                        .iter()
                        .zip(vb.data())
                        .map(|(x, y)| if pick_min { x <= y } else { x >= y })
                        .collect();
                    if wants(*a) {
                        let mut ga = g.clone();
                        for (v, &t) in ga.data_mut().iter_mut().zip(&to_a) {
                            if !t {
                                *v = 0.0;
                            }
                        }
                        accumulate(&mut grads, *a, ga);
                    }
                    if wants(*b) {
                        let mut gb = g;
                        for (v, &t) in gb.data_mut().iter_mut().zip(&to_a) {
                            if t {
                                *v = 0.0;
                            }
                        }
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Neg(a) => accumulate(&mut grads, *a, g.scale(-1.0)),
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.scale(*c)),
                Op::AddScalar(a) => accumulate(&mut grads, *a, g),
                Op::Relu(a) => {
                    let d = g.zip_map(val(*a), "relu'", |g, x| if x > 0.0 { g } else { 0.0 })?;
                    accumulate(&mut grads, *a, d);
                }
                Op::Elu(a) => {
                    let d = g.zip_map(val(*a), "elu'", |g, x| if x > 0.0 { g } else { g * x.exp() })?;
                    accumulate(&mut grads, *a, d);
                }
                Op::Tanh(a) => {
                    let d = g.zip_map(&node.value, "tanh'", |g, y| g * (1.0 - y * y))?;
                    accumulate(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => {
                    let d = g.zip_map(&node.value, "sigmoid'", |g, y| g * y * (1.0 - y))?;
                    accumulate(&mut grads, *a, d);
                }
                Op::Exp(a) => {
                    let d = g.mul(&node.value)?;
                    accumulate(&mut grads, *a, d);
                }
                Op::Ln(a) => {
                    let d = g.zip_map(val(*a), "ln'", |g, x| g / x)?;
                    accumulate(&mut grads, *a, d);
                }
                Op::Square(a) => {
                    let d = g.zip_map(val(*a), "square'", |g, x| 2.0 * g * x)?;
                    accumulate(&mut grads, *a, d);
                }
                Op::Clamp(a, lo, hi) => {
                    let (lo, hi) = (*lo, *hi);
                    let d = g.zip_map(val(*a), "clamp'", |g, x| if x >= lo && x <= hi { g } else { 0.0 })?;
                    accumulate(&mut grads, *a, d);
                }
                Op::SumCols(a) => {
                    let (n, m) = (val(*a).rows(), val(*a).cols());
                    let mut d = Tensor::zeros(n, m);
                    for r in 0..n {
                        let gr = g.data()[r];
                        d.data_mut()[r * m..(r + 1) * m].fill(gr);
                    }
                    let d = Tensor::new(val(*a).shape().to_vec(), d.into_data())?;
                    accumulate(&mut grads, *a, d);
                }
                Op::SumAll(a) | Op::MeanAll(a) => {
                    let src = val(*a);
                    let mut gv = g.data()[0];
                    if matches!(node.op, Op::MeanAll(_)) {
                        gv /= src.len() as f64;
                    }
                    let d = Tensor::new(src.shape().to_vec(), vec![gv; src.len()])?;
                    accumulate(&mut grads, *a, d);
                }
                Op::Concat(parts) => {
                    let n = g.rows();
                    let total = g.cols();
                    let mut offset = 0;
                    for p in parts {
                        let c = val(*p).cols();
                        if wants(*p) {
                            let mut d = Vec::with_capacity(n * c);
                            for r in 0..n {
                                d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + c]);
                            }
                            let d = Tensor::new(val(*p).shape().to_vec(), d)?;
                            accumulate(&mut grads, *p, d);
                        }
                        offset += c;
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(g.data()) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::row(&[1.0, -2.0]), true).unwrap();
        let sq = t.square(x).unwrap();
        let loss = t.sum(sq).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, -4.0]);
    }

    #[test]
    fn constant_loss_gives_zero_grads() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::row(&[3.0, 4.0]), true).unwrap();
        let z = t.scale(x, 0.0).unwrap();
        let c = t.constant(Tensor::row(&[1.0, 1.0])).unwrap();
        let y = t.add(z, c).unwrap();
        let loss = t.sum(y).unwrap();
        let g = t.backward(loss).unwrap();
        assert!(g.get(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::row(&[1.0, 2.0]), true).unwrap();
        assert!(matches!(t.backward(x), Err(Error::Shape { .. })));
    }

    #[test]
    fn empty_tape_is_rejected() {
        assert!(Tape::new().backward(Var(0)).is_err());
    }

    #[test]
    fn non_finite_values_are_errors() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::row(&[-1.0]), true).unwrap();
        assert!(matches!(t.ln(x), Err(Error::NonFinite("ln"))));
        assert!(t.leaf(Tensor::row(&[f64::NAN]), false).is_err());
    }

    #[test]
    fn constants_do_not_receive_gradients() {
        let mut t = Tape::new();
        let w = t.constant(Tensor::row(&[2.0])).unwrap();
        let x = t.leaf(Tensor::row(&[3.0]), true).unwrap();
        let y = t.mul(w, x).unwrap();
        let g = t.backward(y).unwrap();
        assert!(g.get(w).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[2.0]);
    }

    #[test]
    fn min_routes_gradient_to_smaller_operand() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::row(&[1.0, 5.0]), true).unwrap();
        let b = t.leaf(Tensor::row(&[2.0, 3.0]), true).unwrap();
        let m = t.minimum(a, b).unwrap();
        let l = t.sum(m).unwrap();
        let g = t.backward(l).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[1.0, 0.0]);
        assert_eq!(g.get(b).unwrap().data(), &[0.0, 1.0]);
    }
}
