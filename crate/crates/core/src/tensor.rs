//! Dense 2-D tensors and a tape-based reverse-mode differentiation engine.
//!
//! A [`Tape`] records every primitive applied to [`Var`] handles during the
//! forward pass; [`Tape::backward`] walks the record in reverse once and
//! returns gradients for every input that requires one. Matrices are
//! row-major `f64`; products go through `matrixmultiply`.
//!
//! Row-wise primitives compute each output row from the matching input row
//! only, and the sparse product sums neighbor contributions in an order that
//! depends on values rather than indices. Relabeling nodes therefore
//! permutes outputs bit-for-bit.

use std::cmp::Ordering;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::SparseMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("tensor data length {len} does not match shape {rows}x{cols}")]
    Length { rows: usize, cols: usize, len: usize },
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("backward needs a 1x1 output, got {0:?}")]
    NotScalar((usize, usize)),
    #[error("tape already consumed by a backward pass")]
    Consumed,
    #[error("index {index} out of range for {rows} rows")]
    Index { index: usize, rows: usize },
    #[error("weight manifest: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    /// Validating constructor: length must match and every value be finite.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        if data.len() != rows * cols {
            return Err(TensorError::Length {
                rows,
                cols,
                len: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite(i));
        }
        Ok(Self { rows, cols, data })
    }

    pub(crate) fn raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::raw(rows, cols, vec![0.0; rows * cols])
    }

    pub fn full(rows: usize, cols: usize, value: f64) -> Self {
        Self::raw(rows, cols, vec![value; rows * cols])
    }

    pub fn scalar(value: f64) -> Self {
        Self::raw(1, 1, vec![value])
    }

    pub fn column(values: Vec<f64>) -> Self {
        Self::raw(values.len(), 1, values)
    }

    pub fn row_vector(values: Vec<f64>) -> Self {
        Self::raw(1, values.len(), values)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::raw(rows, cols, data)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Value of a 1x1 tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.shape(), (1, 1), "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::raw(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self, TensorError> {
        if self.cols != rhs.rows {
            return Err(TensorError::Shape {
                op: "matmul",
                lhs: self.shape(),
                rhs: rhs.shape(),
            });
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        gemm(self, false, rhs, false, &mut out, 0.0);
        Ok(out)
    }

    fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `out = beta * out + op(a) * op(b)` where `op` optionally transposes.
fn gemm(a: &Tensor, ta: bool, b: &Tensor, tb: bool, out: &mut Tensor, beta: f64) {
    let (m, k) = if ta { (a.cols, a.rows) } else { (a.rows, a.cols) };
    let n = if tb { b.rows } else { b.cols };
    debug_assert_eq!(out.shape(), (m, n));
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut out.data {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = if ta { (1, a.cols as isize) } else { (a.cols as isize, 1) };
    let (rsb, csb) = if tb { (1, b.cols as isize) } else { (b.cols as isize, 1) };
    // SAFETY: strides and extents describe the owned buffers exactly.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.data.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<'a> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    SoftmaxRows(Var),
    Clamp(Var, f64, f64),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    SparseLeft(&'a SparseMatrix, Var),
    SumAll(Var),
    MeanAll(Var),
    SquaredErrorMean(Var, Var),
}

#[derive(Debug)]
struct Node<'a> {
    value: Tensor,
    op: Op<'a>,
    needs_grad: bool,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of `var`; zeros when the output does not depend on it.
    pub fn get(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn take(&mut self, var: Var) -> Tensor {
        match self.grads[var.0].take() {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[var.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

/// Record of a forward computation. One backward pass per tape.
#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
    consumed: bool,
}

macro_rules! same_shape {
    ($self:ident, $name:literal, $a:expr, $b:expr) => {{
        let (sa, sb) = ($self.shape($a), $self.shape($b));
        if sa != sb {
            return Err(TensorError::Shape {
                op: $name,
                lhs: sa,
                rhs: sb,
            });
        }
    }};
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op<'a>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Trainable input.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Input excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (x, y) = (self.value(a), self.value(b));
        Tensor::raw(x.rows, x.cols, x.data.iter().zip(&y.data).map(|(&p, &q)| f(p, q)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        same_shape!(self, "add", a, b);
        let v = self.zip(a, b, |p, q| p + q);
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        same_shape!(self, "sub", a, b);
        let v = self.zip(a, b, |p, q| p - q);
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        same_shape!(self, "mul", a, b);
        let v = self.zip(a, b, |p, q| p * q);
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        same_shape!(self, "div", a, b);
        let v = self.zip(a, b, |p, q| p / q);
        Ok(self.push(v, Op::Div(a, b), &[a, b]))
    }

    /// Adds the `1 x cols` tensor `row` to every row of `a`.
    pub fn add_broadcast_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr.0 != 1 || sr.1 != sa.1 {
            return Err(TensorError::Shape {
                op: "add_broadcast_row",
                lhs: sa,
                rhs: sr,
            });
        }
        let (x, r) = (self.value(a), self.value(row));
        let mut data = x.data.clone();
        for chunk in data.chunks_mut(sa.1.max(1)) {
            for (d, b) in chunk.iter_mut().zip(&r.data) {
                *d += b;
            }
        }
        let v = Tensor::raw(sa.0, sa.1, data);
        Ok(self.push(v, Op::AddRow(a, row), &[a, row]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x + s);
        self.push(v, Op::AddScalar(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a), &[a])
    }

    /// `ln(1 + e^x)`, evaluated stably.
    pub fn softplus(&mut self, a: Var) -> Var {
        let v = self.value(a).map(softplus);
        self.push(v, Op::Softplus(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.push(v, Op::Exp(a), &[a])
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        self.push(v, Op::Ln(a), &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let cols = x.cols.max(1);
        let mut data = x.data.clone();
        for row in data.chunks_mut(cols) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let v = Tensor::raw(x.rows, x.cols, data);
        self.push(v, Op::SoftmaxRows(a), &[a])
    }

    /// Hard clamp; gradient 1 on `[lo, hi]`, 0 outside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.push(v, Op::Clamp(a, lo, hi), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let rows = self.shape(parts[0]).0;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(TensorError::Shape {
                    op: "concat_cols",
                    lhs: self.shape(parts[0]),
                    rhs: self.shape(p),
                });
            }
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let v = Tensor::raw(rows, cols, data);
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Row `t` of the output is row `indices[t]` of `a`.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var, TensorError> {
        let x = self.value(a);
        let mut data = Vec::with_capacity(indices.len() * x.cols);
        for &i in indices {
            if i >= x.rows {
                return Err(TensorError::Index { index: i, rows: x.rows });
            }
            data.extend_from_slice(x.row(i));
        }
        let v = Tensor::raw(indices.len(), x.cols, data);
        Ok(self.push(v, Op::GatherRows(a, indices.to_vec()), &[a]))
    }

    /// `s * a` for a constant sparse `s`.
    pub fn sparse_matmul(&mut self, s: &'a SparseMatrix, a: Var) -> Result<Var, TensorError> {
        let x = self.value(a);
        if s.dim() != x.rows {
            return Err(TensorError::Shape {
                op: "sparse_matmul",
                lhs: (s.dim(), s.dim()),
                rhs: x.shape(),
            });
        }
        let v = sparse_left(s, x);
        Ok(self.push(v, Op::SparseLeft(s, a), &[a]))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).data.iter().sum());
        self.push(v, Op::SumAll(a), &[a])
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Tensor::scalar(x.data.iter().sum::<f64>() / x.len().max(1) as f64);
        self.push(v, Op::MeanAll(a), &[a])
    }

    pub fn squared_error_mean(&mut self, pred: Var, target: Var) -> Result<Var, TensorError> {
        same_shape!(self, "squared_error_mean", pred, target);
        let (p, t) = (self.value(pred), self.value(target));
        let s: f64 = p.data.iter().zip(&t.data).map(|(a, b)| (a - b) * (a - b)).sum();
        let v = Tensor::scalar(s / p.len().max(1) as f64);
        Ok(self.push(v, Op::SquaredErrorMean(pred, target), &[pred, target]))
    }

    /// Reverse pass from a scalar output.
    pub fn backward(&mut self, out: Var) -> Result<Gradients, TensorError> {
        if self.consumed {
            return Err(TensorError::Consumed);
        }
        let shape = self.shape(out);
        if shape != (1, 1) {
            return Err(TensorError::NotScalar(shape));
        }
        self.consumed = true;
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[out.0] = Some(Tensor::scalar(1.0));
        for idx in (0..=out.0).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let y = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        let unary = |x: &Tensor, f: &dyn Fn(f64, f64, f64) -> f64| -> Tensor {
            Tensor::raw(
                x.rows,
                x.cols,
                x.data
                    .iter()
                    .zip(&y.data)
                    .zip(&g.data)
                    .map(|((&xi, &yi), &gi)| f(xi, yi, gi))
                    .collect(),
            )
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    let mut ga = Tensor::zeros(val(*a).rows, val(*a).cols);
                    gemm(g, false, val(*b), true, &mut ga, 0.0);
                    acc(*a, ga);
                }
                if wants(*b) {
                    let mut gb = Tensor::zeros(val(*b).rows, val(*b).cols);
                    gemm(val(*a), true, g, false, &mut gb, 0.0);
                    acc(*b, gb);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (xa, xb) = (val(*a), val(*b));
                if wants(*a) {
                    acc(*a, Tensor::raw(g.rows, g.cols, g.data.iter().zip(&xb.data).map(|(p, q)| p * q).collect()));
                }
                if wants(*b) {
                    acc(*b, Tensor::raw(g.rows, g.cols, g.data.iter().zip(&xa.data).map(|(p, q)| p * q).collect()));
                }
            }
            Op::Div(a, b) => {
                let xb = val(*b);
                if wants(*a) {
                    acc(*a, Tensor::raw(g.rows, g.cols, g.data.iter().zip(&xb.data).map(|(p, q)| p / q).collect()));
                }
                if wants(*b) {
                    let gb = g
                        .data
                        .iter()
                        .zip(&y.data)
                        .zip(&xb.data)
                        .map(|((gi, yi), bi)| -gi * yi / bi)
                        .collect();
                    acc(*b, Tensor::raw(g.rows, g.cols, gb));
                }
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                if wants(*row) {
                    let mut s = vec![0.0; g.cols];
                    for r in 0..g.rows {
                        for (c, v) in g.row(r).iter().enumerate() {
                            s[c] += v;
                        }
                    }
                    acc(*row, Tensor::raw(1, g.cols, s));
                }
            }
            Op::Scale(a, s) => acc(*a, g.map(|v| v * s)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Tanh(a) => acc(*a, unary(val(*a), &|_, yi, gi| gi * (1.0 - yi * yi))),
            Op::Relu(a) => acc(*a, unary(val(*a), &|xi, _, gi| if xi > 0.0 { gi } else { 0.0 })),
            Op::Sigmoid(a) => acc(*a, unary(val(*a), &|_, yi, gi| gi * yi * (1.0 - yi))),
            Op::Softplus(a) => acc(*a, unary(val(*a), &|xi, _, gi| gi * sigmoid(xi))),
            Op::Exp(a) => acc(*a, unary(val(*a), &|_, yi, gi| gi * yi)),
            Op::Ln(a) => acc(*a, unary(val(*a), &|xi, _, gi| gi / xi)),
            Op::SoftmaxRows(a) => {
                let cols = y.cols.max(1);
                let mut out = Vec::with_capacity(y.len());
                for (yr, gr) in y.data.chunks(cols).zip(g.data.chunks(cols)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    out.extend(yr.iter().zip(gr).map(|(yi, gi)| yi * (gi - dot)));
                }
                acc(*a, Tensor::raw(y.rows, y.cols, out));
            }
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                acc(*a, unary(val(*a), &|xi, _, gi| if xi >= lo && xi <= hi { gi } else { 0.0 }));
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pc = val(p).cols;
                    if wants(p) {
                        let t = Tensor::from_fn(g.rows, pc, |r, c| g.get(r, off + c));
                        acc(p, t);
                    }
                    off += pc;
                }
            }
            Op::GatherRows(a, indices) => {
                let x = val(*a);
                let mut t = Tensor::zeros(x.rows, x.cols);
                for (r, &i) in indices.iter().enumerate() {
                    let dst = &mut t.data[i * x.cols..(i + 1) * x.cols];
                    for (d, s) in dst.iter_mut().zip(g.row(r)) {
                        *d += s;
                    }
                }
                acc(*a, t);
            }
            Op::SparseLeft(s, a) => {
                let cols = g.cols;
                let mut t = Tensor::zeros(g.rows, cols);
                for i in 0..s.dim() {
                    let gi = &g.data[i * cols..(i + 1) * cols];
                    for &(k, c) in s.row(i) {
                        let dst = &mut t.data[k * cols..(k + 1) * cols];
                        for (d, v) in dst.iter_mut().zip(gi) {
                            *d += c * v;
                        }
                    }
                }
                acc(*a, t);
            }
            Op::SumAll(a) => {
                let x = val(*a);
                acc(*a, Tensor::full(x.rows, x.cols, g.item()));
            }
            Op::MeanAll(a) => {
                let x = val(*a);
                acc(*a, Tensor::full(x.rows, x.cols, g.item() / x.len().max(1) as f64));
            }
            Op::SquaredErrorMean(p, t) => {
                let (xp, xt) = (val(*p), val(*t));
                let k = 2.0 * g.item() / xp.len().max(1) as f64;
                let d: Vec<f64> = xp.data.iter().zip(&xt.data).map(|(a, b)| k * (a - b)).collect();
                if wants(*t) {
                    acc(*t, Tensor::raw(xp.rows, xp.cols, d.iter().map(|v| -v).collect()));
                }
                acc(*p, Tensor::raw(xp.rows, xp.cols, d));
            }
        }
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

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn cmp_rows(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    Ordering::Equal
}

/// `s * x` with each output row summed in value order, so the result does
/// not depend on how nodes are numbered.
pub fn sparse_left(s: &SparseMatrix, x: &Tensor) -> Tensor {
    let cols = x.cols;
    let mut out = Tensor::zeros(x.rows, cols);
    let mut order: Vec<(usize, f64)> = Vec::new();
    for i in 0..s.dim() {
        order.clear();
        order.extend_from_slice(s.row(i));
        order.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| cmp_rows(x.row(a.0), x.row(b.0))));
        let dst = &mut out.data[i * cols..(i + 1) * cols];
        for &(k, c) in &order {
            for (d, v) in dst.iter_mut().zip(x.row(k)) {
                *d += c * v;
            }
        }
    }
    out
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(params: &[Tensor], lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.rows, p.cols)).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.rows, p.cols)).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<(), TensorError> {
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(TensorError::Shape {
                    op: "adam_step",
                    lhs: p.shape(),
                    rhs: g.shape(),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = self.beta1 * m.data[i] + (1.0 - self.beta1) * gi;
                v.data[i] = self.beta2 * v.data[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m.data[i] / c1;
                let vh = v.data[i] / c2;
                p.data[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: [usize; 2],
    data: String,
}

/// Named tensors serialized as JSON with base64 little-endian `f64` payloads.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightManifest {
    pub tensors: Vec<(String, Tensor)>,
}

#[derive(Serialize, Deserialize)]
struct ManifestDoc {
    tensors: Vec<ManifestEntry>,
}

impl WeightManifest {
    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn to_json(&self) -> String {
        let doc = ManifestDoc {
            tensors: self
                .tensors
                .iter()
                .map(|(name, t)| {
                    let bytes: Vec<u8> = t.data.iter().flat_map(|v| v.to_le_bytes()).collect();
                    ManifestEntry {
                        name: name.clone(),
                        shape: [t.rows, t.cols],
                        data: B64.encode(bytes),
                    }
                })
                .collect(),
        };
        serde_json::to_string(&doc).expect("manifest serializes")
    }

    pub fn from_json(doc: &str) -> Result<Self, TensorError> {
        let parsed: ManifestDoc = serde_json::from_str(doc).map_err(|e| TensorError::Manifest(e.to_string()))?;
        let mut out = Self::default();
        for e in parsed.tensors {
            let bytes = B64
                .decode(e.data.as_bytes())
                .map_err(|err| TensorError::Manifest(format!("{}: {err}", e.name)))?;
            if bytes.len() % 8 != 0 {
                return Err(TensorError::Manifest(format!("{}: payload not a multiple of 8 bytes", e.name)));
            }
            let data = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let t = Tensor::new(e.shape[0], e.shape[1], data)?;
            out.tensors.push((e.name, t));
        }
        Ok(out)
    }

    /// Checks names and shapes against an expected layout, in order.
    pub fn validate(&self, expected: &[(String, (usize, usize))]) -> Result<(), TensorError> {
        if self.tensors.len() != expected.len() {
            return Err(TensorError::Manifest(format!(
                "expected {} tensors, found {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for ((name, t), (ename, eshape)) in self.tensors.iter().zip(expected) {
            if name != ename || t.shape() != *eshape {
                return Err(TensorError::Manifest(format!(
                    "tensor `{name}` {:?} does not match expected `{ename}` {eshape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_equal_logits() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::row_vector(vec![0.0, 0.0]));
        let y = tape.softmax_rows(x);
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn clamp_values_and_gradients() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::row_vector(vec![-2.5, -5.0]));
        let y = tape.clamp(x, -4.0, -1.0);
        assert_eq!(tape.value(y).data(), &[-2.5, -4.0]);
        let s = tape.sum_all(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).data(), &[1.0, 0.0]);
    }

    #[test]
    fn identity_matmul_passes_gradient() {
        let mut tape = Tape::new();
        let i = tape.constant(Tensor::identity(2));
        let x = tape.param(Tensor::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let y = tape.matmul(i, x).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
        let w = tape.constant(Tensor::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap());
        let z = tape.mul(y, w).unwrap();
        let s = tape.sum_all(z);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).data(), &[0.1, 0.2, 0.3, 0.4]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::row_vector(vec![1.0, 2.0]));
        let sq = tape.mul(x, x).unwrap();
        let s = tape.sum_all(sq);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).data(), &[2.0, 4.0]);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::row_vector(vec![1.0, 2.0]));
        let c = tape.constant(Tensor::scalar(3.0));
        let z = tape.scale(x, 0.0);
        let s = tape.sum_all(z);
        let out = tape.add(s, c).unwrap();
        let g = tape.backward(out).unwrap();
        assert_eq!(g.get(x).data(), &[0.0, 0.0]);
    }

    #[test]
    fn second_backward_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(1.0));
        let y = tape.exp(x);
        tape.backward(y).unwrap();
        assert_eq!(tape.backward(y).unwrap_err(), TensorError::Consumed);
    }

    #[test]
    fn shape_errors() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(2, 3));
        assert!(matches!(tape.matmul(a, b), Err(TensorError::Shape { .. })));
        let r = tape.constant(Tensor::zeros(1, 2));
        assert!(tape.add_broadcast_row(a, r).is_err());
        assert!(tape.backward(a).is_err());
        assert!(Tensor::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(1, 2, vec![1.0]).is_err());
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut p = vec![Tensor::row_vector(vec![0.3, -1.2])];
        let mut opt = Adam::new(&p, 1e-3);
        for _ in 0..10 {
            opt.step(&mut p, &[Tensor::zeros(1, 2)]).unwrap();
        }
        assert!((p[0].data()[0] - 0.3).abs() < 1e-12);
        assert!((p[0].data()[1] + 1.2).abs() < 1e-12);
    }

    #[test]
    fn adam_constant_gradient_step_approaches_lr() {
        let mut p = vec![Tensor::scalar(0.0)];
        let mut opt = Adam::new(&p, 1e-3);
        let mut last = 0.0;
        for _ in 0..500 {
            let before = p[0].item();
            opt.step(&mut p, &[Tensor::scalar(0.7)]).unwrap();
            last = before - p[0].item();
        }
        assert!((last - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn manifest_round_trip_and_validation() {
        let mut m = WeightManifest::default();
        m.push("w", Tensor::new(2, 1, vec![1.5, -0.25]).unwrap());
        let back = WeightManifest::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert!(back.validate(&[("w".into(), (2, 1))]).is_ok());
        assert!(back.validate(&[("w".into(), (1, 2))]).is_err());
    }
}
