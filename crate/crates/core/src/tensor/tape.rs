//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its value and the rule that pushes an output gradient to its parents.
//! Nodes are appended in evaluation order, so the node list is already a
//! topological order and [`Tape::backward`] is a single reverse sweep.
//!
//! ```
//! use dglfrm::tensor::{ParamStore, Tape, Tensor};
//!
//! let mut store = ParamStore::new();
//! let w = store.add("w", Tensor::from_rows(&[[1.0, 2.0]]));
//!
//! let mut tape = Tape::new();
//! let x = tape.param(&store, w);
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! tape.backward(loss, &mut store).unwrap();
//!
//! assert_eq!(store.grad(w).data(), &[2.0, 4.0]);
//! ```

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use super::{ParamId, ParamStore, SparseMatrix, Tensor};
use crate::error::{Error, Result};
use crate::special::{sigmoid, softplus};

/// Slope of the negative half of the leaky ReLU unless configured otherwise.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Sigmoid,
    Softplus,
    Exp,
    Log,
    LeakyRelu(f64),
    Tanh,
    Negate,
    Reciprocal,
}

impl Unary {
    fn name(self) -> &'static str {
        match self {
            Unary::Sigmoid => "sigmoid",
            Unary::Softplus => "softplus",
            Unary::Exp => "exp",
            Unary::Log => "log",
            Unary::LeakyRelu(_) => "leaky_relu",
            Unary::Tanh => "tanh",
            Unary::Negate => "negate",
            Unary::Reciprocal => "reciprocal",
        }
    }

    /// Value and derivative at `x`.
    fn eval(self, x: f64) -> (f64, f64) {
        match self {
            Unary::Sigmoid => {
                let s = sigmoid(x);
                (s, s * (1.0 - s))
            }
            Unary::Softplus => (softplus(x), sigmoid(x)),
            Unary::Exp => {
                let e = x.exp();
                (e, e)
            }
            Unary::Log => (x.ln(), 1.0 / x),
            Unary::LeakyRelu(slope) => {
                if x >= 0.0 {
                    (x, 1.0)
                } else {
                    (slope * x, slope)
                }
            }
            Unary::Tanh => {
                let t = x.tanh();
                (t, 1.0 - t * t)
            }
            Unary::Negate => (-x, -1.0),
            Unary::Reciprocal => (1.0 / x, -1.0 / (x * x)),
        }
    }

    fn check_domain(self, x: f64) -> bool {
        match self {
            Unary::Log => x > 0.0,
            Unary::Reciprocal => x != 0.0,
            _ => true,
        }
    }
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Transpose(Var),
    SpMM(Arc<SparseMatrix>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    RepeatRows(Var),
    Pointwise(Var, Vec<f64>),
    Pointwise2(Var, Var, Vec<f64>, Vec<f64>),
    Reduce(Var, Vec<f64>),
    CumProdRows(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients of differentiable leaves created with [`Tape::var`].
#[derive(Debug, Default)]
pub struct Gradients {
    leaves: HashMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.leaves.get(&v)
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push_raw(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, name: &str, value: Tensor, op: Op, requires_grad: bool) -> Result<Var> {
        if let Some(i) = value.first_non_finite() {
            return Err(Error::NonFinite(format!("{name} (entry {i})")));
        }
        Ok(self.push_raw(value, op, requires_grad))
    }

    /// Data that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push_raw(t, Op::Leaf, false)
    }

    /// A differentiable leaf; its gradient is returned by [`Tape::backward`].
    pub fn var(&mut self, t: Tensor) -> Var {
        self.push_raw(t, Op::Leaf, true)
    }

    /// Current value of a stored parameter; gradients flow back into the
    /// store.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push_raw(store.value(id).clone(), Op::Param(id), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.requires(a) || self.requires(b);
        self.push("matmul", out, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul_nt(self.value(b))?;
        let rg = self.requires(a) || self.requires(b);
        self.push("matmul_nt", out, Op::MatMulNt(a, b), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let rg = self.requires(a);
        self.push_raw(out, Op::Transpose(a), rg)
    }

    /// Sparse–dense product. The sparse operand is data and gets no gradient.
    pub fn spmm(&mut self, s: &Arc<SparseMatrix>, b: Var) -> Result<Var> {
        let out = s.spmm(self.value(b))?;
        let rg = self.requires(b);
        self.push("spmm", out, Op::SpMM(Arc::clone(s), b), rg)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.requires(a) || self.requires(b);
        self.push("add", out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let rg = self.requires(a) || self.requires(b);
        self.push("sub", out, Op::Sub(a, b), rg)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.requires(a) || self.requires(b);
        self.push("mul", out, Op::Mul(a, b), rg)
    }

    /// Adds a `1×q` row vector to every row of an `n×q` matrix.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (xs, rs) = (self.shape(x), self.shape(row));
        if xs.len() != 2 || rs != [1, xs[1]] {
            return Err(Error::shape("add_row", xs, rs));
        }
        let cols = xs[1];
        let r = self.value(row).data().to_vec();
        let mut out = self.value(x).clone();
        for chunk in out.data_mut().chunks_mut(cols.max(1)) {
            for (o, b) in chunk.iter_mut().zip(&r) {
                *o += b;
            }
        }
        let rg = self.requires(x) || self.requires(row);
        self.push("add_row", out, Op::AddRow(x, row), rg)
    }

    /// Stacks a `1×q` row `n` times.
    pub fn repeat_rows(&mut self, row: Var, n: usize) -> Result<Var> {
        if self.shape(row).len() != 2 || self.shape(row)[0] != 1 {
            return Err(Error::shape("repeat_rows", self.shape(row), &[1, 0]));
        }
        let out = self.value(row).repeat_rows(n);
        let rg = self.requires(row);
        Ok(self.push_raw(out, Op::RepeatRows(row), rg))
    }

    pub fn unary(&mut self, x: Var, f: Unary) -> Result<Var> {
        let input = self.value(x);
        if let Some(i) = input.data().iter().position(|&v| !f.check_domain(v)) {
            return Err(Error::Domain {
                op: f.name(),
                index: i,
                value: input.data()[i],
            });
        }
        let (vals, ders): (Vec<f64>, Vec<f64>) = input.data().iter().map(|&v| f.eval(v)).unzip();
        let out = Tensor::new(input.shape().to_vec(), vals)?;
        let rg = self.requires(x);
        self.push(f.name(), out, Op::Pointwise(x, ders), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Sigmoid)
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Softplus)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Exp)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Unary::Log)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.unary(x, Unary::LeakyRelu(slope))
    }

    /// `scale · x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        self.map_pointwise("affine", x, |v| (scale * v + shift, scale))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.affine(x, c, 0.0)
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where clamping was active.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.map_pointwise("clamp", x, |v| {
            if v < lo {
                (lo, 0.0)
            } else if v > hi {
                (hi, 0.0)
            } else {
                (v, 1.0)
            }
        })
    }

    /// Inverted dropout: zeroes entries with probability `rate` and scales
    /// the survivors by `1/(1 - rate)`. Identity when `rate` is zero.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if rate <= 0.0 {
            return Ok(x);
        }
        if rate >= 1.0 {
            return Err(Error::Config(format!("dropout rate {rate} must be below 1")));
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let out = self.value(x).data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(self.shape(x).to_vec(), out)?;
        let rg = self.requires(x);
        self.push("dropout", out, Op::Pointwise(x, mask), rg)
    }

    /// Elementwise op given by a function returning `(value, derivative)`.
    pub fn map_pointwise(
        &mut self,
        name: &'static str,
        x: Var,
        f: impl Fn(f64) -> (f64, f64) + Sync,
    ) -> Result<Var> {
        let input = self.value(x);
        let (vals, ders): (Vec<f64>, Vec<f64>) = input.data().iter().map(|&v| f(v)).unzip();
        let out = Tensor::new(input.shape().to_vec(), vals)?;
        let rg = self.requires(x);
        self.push(name, out, Op::Pointwise(x, ders), rg)
    }

    /// Elementwise op of two same-shaped inputs given by a function returning
    /// `(value, ∂/∂a, ∂/∂b)`.
    pub fn map_pointwise2(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> (f64, f64, f64) + Sync,
    ) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                "map_pointwise2",
                self.shape(a),
                self.shape(b),
            ));
        }
        let n = self.value(a).len();
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let mut vals = Vec::with_capacity(n);
        let mut da = Vec::with_capacity(n);
        let mut db = Vec::with_capacity(n);
        for (&p, &q) in xa.iter().zip(xb) {
            let (v, ga, gb) = f(p, q);
            vals.push(v);
            da.push(ga);
            db.push(gb);
        }
        let out = Tensor::new(self.shape(a).to_vec(), vals)?;
        let rg = self.requires(a) || self.requires(b);
        self.push(name, out, Op::Pointwise2(a, b, da, db), rg)
    }

    /// Elementwise op of two inputs whose values and partial derivatives were
    /// computed by the caller.
    pub fn pointwise2_from_parts(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        value: Tensor,
        da: Vec<f64>,
        db: Vec<f64>,
    ) -> Result<Var> {
        let n = value.len();
        if self.shape(a) != value.shape() || self.shape(b) != value.shape() || da.len() != n || db.len() != n {
            return Err(Error::shape(name, self.shape(a), self.shape(b)));
        }
        let rg = self.requires(a) || self.requires(b);
        self.push(name, value, Op::Pointwise2(a, b, da, db), rg)
    }

    /// Scalar function of a whole tensor with a precomputed local gradient.
    pub fn reduce_with_grad(
        &mut self,
        name: &'static str,
        x: Var,
        value: f64,
        local_grad: Vec<f64>,
    ) -> Result<Var> {
        if local_grad.len() != self.value(x).len() {
            return Err(Error::shape(name, self.shape(x), &[local_grad.len()]));
        }
        let rg = self.requires(x);
        self.push(name, Tensor::scalar(value), Op::Reduce(x, local_grad), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let total = self.value(x).sum();
        let rg = self.requires(x);
        // A sum of finite values can only overflow, which `push` reports.
        self.push_raw(Tensor::scalar(total), Op::Reduce(x, vec![1.0; n]), rg)
    }

    /// Row-wise cumulative product along the column axis. Inputs must be
    /// non-zero for the gradient to be defined.
    pub fn cumprod_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let cols = t.cols();
        let mut out = t.clone();
        for row in out.data_mut().chunks_mut(cols.max(1)) {
            for k in 1..row.len() {
                row[k] *= row[k - 1];
            }
        }
        if let Some(i) = t.data().iter().position(|&v| v == 0.0) {
            return Err(Error::Domain {
                op: "cumprod_rows",
                index: i,
                value: 0.0,
            });
        }
        let rg = self.requires(x);
        self.push("cumprod_rows", out, Op::CumProdRows(x), rg)
    }

    /// Sum over all entries of the weighted binary cross-entropy between
    /// `sigmoid(logits)` and `labels`; positives are weighted by
    /// `pos_weight`.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &Tensor, pos_weight: f64) -> Result<Var> {
        let x = self.value(logits);
        if x.shape() != labels.shape() {
            return Err(Error::shape("bce_with_logits", x.shape(), labels.shape()));
        }
        let cols = x.cols().max(1);
        let mut grad = vec![0.0; x.len()];
        let row_losses: Vec<f64> = grad
            .par_chunks_mut(cols)
            .zip(x.data().par_chunks(cols))
            .zip(labels.data().par_chunks(cols))
            .map(|((g, xs), ys)| {
                let mut acc = 0.0;
                for ((gi, &xi), &yi) in g.iter_mut().zip(xs).zip(ys) {
                    let w = yi * pos_weight;
                    acc += w * softplus(-xi) + (1.0 - yi) * softplus(xi);
                    let s = sigmoid(xi);
                    *gi = w * (s - 1.0) + (1.0 - yi) * s;
                }
                acc
            })
            .collect();
        let total = row_losses.iter().sum();
        self.reduce_with_grad("bce_with_logits", logits, total, grad)
    }

    /// Reverse sweep from a scalar `loss`. Parameter gradients are added into
    /// `store`; gradients of [`Tape::var`] leaves are returned.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.shape(loss)));
        let mut out = Gradients::default();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {
                    out.leaves.insert(Var(i), g);
                }
                Op::Param(id) => store.accumulate_grad(*id, &g),
                Op::MatMul(a, b) => {
                    if self.requires(*a) {
                        let ga = g.matmul_nt(self.value(*b))?;
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.requires(*b) {
                        let gb = self.value(*a).matmul_tn(&g)?;
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::MatMulNt(a, b) => {
                    // out = a bᵀ: ∂a = g b, ∂b = gᵀ a
                    if self.requires(*a) {
                        let ga = g.matmul(self.value(*b))?;
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.requires(*b) {
                        let gb = g.matmul_tn(self.value(*a))?;
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                Op::SpMM(s, b) => {
                    let gb = s.spmm_t(&g)?;
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    if self.requires(*b) {
                        accumulate(&mut grads, *b, g.clone());
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    if self.requires(*b) {
                        accumulate(&mut grads, *b, g.map(|v| -v));
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    if self.requires(*a) {
                        accumulate(&mut grads, *a, g.zip_map(self.value(*b), |x, y| x * y)?);
                    }
                    if self.requires(*b) {
                        accumulate(&mut grads, *b, g.zip_map(self.value(*a), |x, y| x * y)?);
                    }
                }
                Op::AddRow(x, row) => {
                    if self.requires(*row) {
                        accumulate(&mut grads, *row, g.sum_rows());
                    }
                    accumulate(&mut grads, *x, g);
                }
                Op::RepeatRows(row) => accumulate(&mut grads, *row, g.sum_rows()),
                Op::Pointwise(x, d) => {
                    let mut gx = g;
                    for (gi, di) in gx.data_mut().iter_mut().zip(d) {
                        *gi *= di;
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Pointwise2(a, b, da, db) => {
                    if self.requires(*b) {
                        let gb = scale_by(&g, db);
                        accumulate(&mut grads, *b, gb);
                    }
                    if self.requires(*a) {
                        let ga = scale_by(&g, da);
                        accumulate(&mut grads, *a, ga);
                    }
                }
                Op::Reduce(x, local) => {
                    let s = g.item();
                    let gx = Tensor::new(
                        self.shape(*x).to_vec(),
                        local.iter().map(|l| s * l).collect(),
                    )?;
                    accumulate(&mut grads, *x, gx);
                }
                Op::CumProdRows(x) => {
                    let input = self.value(*x);
                    let prods = &node.value;
                    let cols = input.cols().max(1);
                    let mut gx = Tensor::zeros(input.shape());
                    for ((gx_row, (g_row, p_row)), v_row) in gx
                        .data_mut()
                        .chunks_mut(cols)
                        .zip(g.data().chunks(cols).zip(prods.data().chunks(cols)))
                        .zip(input.data().chunks(cols))
                    {
                        let mut suffix = 0.0;
                        for k in (0..cols).rev() {
                            suffix += g_row[k] * p_row[k];
                            gx_row[k] = suffix / v_row[k];
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
            }
        }
        Ok(out)
    }
}

fn scale_by(g: &Tensor, d: &[f64]) -> Tensor {
    let mut out = g.clone();
    for (o, di) in out.data_mut().iter_mut().zip(d) {
        *o *= di;
    }
    out
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
