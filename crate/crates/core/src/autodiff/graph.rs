//! Define-by-run reverse-mode graph.
//!
//! Every op appends a node holding its output value; node ids increase
//! monotonically, so the node vector is already a topological order and the
//! backward pass is a single reverse sweep.

use crate::autodiff::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    /// `[m, n] + [n]` (or `[1, n]`) broadcast over rows.
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    /// Row-wise sum: `[m, n] -> [m, 1]`.
    SumCols(Var),
    ConcatCols(Var, Var),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `var`; zeros when the loss does not depend on it.
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

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn op(&self, v: Var) -> Op {
        self.nodes[v.0].op
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(x).map(f);
        let rg = self.rg(x);
        self.push(op, value, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k) = ta.dims2();
        let (k2, n) = tb.dims2();
        if ta.shape().len() > 2 || tb.shape().len() > 2 || k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(ta.data(), false, tb.data(), false, m, k, n, &mut out);
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), value, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add(a, b), value, rg))
    }

    /// Adds a row vector to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (tx, tr) = (self.value(x), self.value(row));
        let (_, n) = tx.dims2();
        let row_ok = tr.len() == n && (tr.shape().len() == 1 || tr.rows() == 1);
        if tx.shape().len() != 2 || !row_ok {
            return Err(Error::Shape {
                op: "add_row",
                left: tx.shape().to_vec(),
                right: tr.shape().to_vec(),
            });
        }
        let mut value = tx.clone();
        let r = tr.data();
        for chunk in value.data_mut().chunks_mut(n) {
            for (v, b) in chunk.iter_mut().zip(r) {
                *v += b;
            }
        }
        let rg = self.rg(x) || self.rg(row);
        Ok(self.push(Op::AddRow(x, row), value, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Sub(a, b), value, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Mul(a, b), value, rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Scale(x, c), |v| v * c)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::AddScalar(x, c), |v| v + c)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    /// `max(x, 0)`; same node as [`Graph::relu`].
    pub fn clamp_min_zero(&mut self, x: Var) -> Var {
        self.relu(x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).data().iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive input {bad}"),
            });
        }
        Ok(self.unary(x, Op::Log(x), f64::ln))
    }

    /// `ln(1 + eˣ)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, Op::Softplus(x), softplus)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Op::Clamp(x, lo, hi), |v| v.clamp(lo, hi))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Op::Sum(x), Tensor::scalar(s), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(x);
        self.push(Op::Mean(x), Tensor::scalar(s), rg)
    }

    pub fn sum_cols(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let (m, n) = t.dims2();
        let data: Vec<f64> = t.data().chunks(n).map(|r| r.iter().sum()).collect();
        let value = Tensor::new(vec![m, 1], data)?;
        let rg = self.rg(x);
        Ok(self.push(Op::SumCols(x), value, rg))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (ma, na) = ta.dims2();
        let (mb, nb) = tb.dims2();
        if ma != mb {
            return Err(Error::Shape {
                op: "concat_cols",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let mut data = Vec::with_capacity(ma * (na + nb));
        for r in 0..ma {
            data.extend_from_slice(ta.row(r));
            data.extend_from_slice(tb.row(r));
        }
        let value = Tensor::new(vec![ma, na + nb], data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::ConcatCols(a, b), value, rg))
    }

    /// Reverse sweep from a `[1]`-shaped loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != [1] {
            return Err(Error::NonScalarLoss(shape.to_vec()));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let out = &node.value;
            match node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(a), self.value(b));
                    let (m, k) = ta.dims2();
                    let (_, nn) = tb.dims2();
                    if self.rg(a) {
                        let mut ga = vec![0.0; m * k];
                        gemm(g.data(), false, tb.data(), true, m, nn, k, &mut ga);
                        accumulate(&mut grads, a, ta.shape(), ga);
                    }
                    if self.rg(b) {
                        let mut gb = vec![0.0; k * nn];
                        gemm(ta.data(), true, g.data(), false, k, m, nn, &mut gb);
                        accumulate(&mut grads, b, tb.shape(), gb);
                    }
                }
                Op::Add(a, b) => {
                    if self.rg(a) {
                        accumulate(&mut grads, a, out.shape(), g.data().to_vec());
                    }
                    if self.rg(b) {
                        accumulate(&mut grads, b, out.shape(), g.into_data());
                    }
                }
                Op::AddRow(x, row) => {
                    if self.rg(row) {
                        let cols = out.cols();
                        let mut gr = vec![0.0; cols];
                        for chunk in g.data().chunks(cols) {
                            for (acc, v) in gr.iter_mut().zip(chunk) {
                                *acc += v;
                            }
                        }
                        accumulate(&mut grads, row, self.value(row).shape(), gr);
                    }
                    if self.rg(x) {
                        accumulate(&mut grads, x, out.shape(), g.into_data());
                    }
                }
                Op::Sub(a, b) => {
                    if self.rg(a) {
                        accumulate(&mut grads, a, out.shape(), g.data().to_vec());
                    }
                    if self.rg(b) {
                        let neg = g.data().iter().map(|v| -v).collect();
                        accumulate(&mut grads, b, out.shape(), neg);
                    }
                }
                Op::Mul(a, b) => {
                    if self.rg(a) {
                        let ga = g.zip_map(self.value(b), |gi, bi| gi * bi).into_data();
                        accumulate(&mut grads, a, out.shape(), ga);
                    }
                    if self.rg(b) {
                        let gb = g.zip_map(self.value(a), |gi, ai| gi * ai).into_data();
                        accumulate(&mut grads, b, out.shape(), gb);
                    }
                }
                Op::Scale(x, c) => {
                    let gx = g.map(|v| v * c).into_data();
                    accumulate(&mut grads, x, out.shape(), gx);
                }
                Op::AddScalar(x, _) => {
                    accumulate(&mut grads, x, out.shape(), g.into_data());
                }
                Op::Relu(x) => {
                    let gx = g
                        .zip_map(self.value(x), |gi, xi| if xi > 0.0 { gi } else { 0.0 })
                        .into_data();
                    accumulate(&mut grads, x, out.shape(), gx);
                }
                Op::Tanh(x) => {
                    let gx = g.zip_map(out, |gi, y| gi * (1.0 - y * y)).into_data();
                    accumulate(&mut grads, x, out.shape(), gx);
                }
                Op::Exp(x) => {
                    let gx = g.zip_map(out, |gi, y| gi * y).into_data();
                    accumulate(&mut grads, x, out.shape(), gx);
                }
                Op::Log(x) => {
                    let gx = g.zip_map(self.value(x), |gi, xi| gi / xi).into_data();
                    accumulate(&mut grads, x, out.shape(), gx);
                }
                Op::Softplus(x) => {
                    let gx = g.zip_map(self.value(x), |gi, xi| gi * sigmoid(xi)).into_data();
                    accumulate(&mut grads, x, out.shape(), gx);
                }
                Op::Square(x) => {
                    let gx = g.zip_map(self.value(x), |gi, xi| 2.0 * xi * gi).into_data();
                    accumulate(&mut grads, x, out.shape(), gx);
                }
                Op::Clamp(x, lo, hi) => {
                    let gx = g
                        .zip_map(self.value(x), |gi, xi| {
                            if xi >= lo && xi <= hi {
                                gi
                            } else {
                                0.0
                            }
                        })
                        .into_data();
                    accumulate(&mut grads, x, out.shape(), gx);
                }
                Op::Sum(x) => {
                    let shape = self.value(x).shape();
                    let n: usize = shape.iter().product();
                    accumulate(&mut grads, x, shape, vec![g.item(); n]);
                }
                Op::Mean(x) => {
                    let shape = self.value(x).shape();
                    let n: usize = shape.iter().product();
                    accumulate(&mut grads, x, shape, vec![g.item() / n as f64; n]);
                }
                Op::SumCols(x) => {
                    let tx = self.value(x);
                    let cols = tx.cols();
                    let gx = g
                        .data()
                        .iter()
                        .flat_map(|&gi| std::iter::repeat(gi).take(cols))
                        .collect();
                    accumulate(&mut grads, x, tx.shape(), gx);
                }
                Op::ConcatCols(a, b) => {
                    let na = self.value(a).cols();
                    let nb = self.value(b).cols();
                    if self.rg(a) {
                        let ga = g.data().chunks(na + nb).flat_map(|r| r[..na].to_vec()).collect();
                        accumulate(&mut grads, a, self.value(a).shape(), ga);
                    }
                    if self.rg(b) {
                        let gb = g.data().chunks(na + nb).flat_map(|r| r[na..].to_vec()).collect();
                        accumulate(&mut grads, b, self.value(b).shape(), gb);
                    }
                }
            }
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(&g) {
                *e += x;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), g).expect("gradient shape"));
        }
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
