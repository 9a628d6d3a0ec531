//! Eager reverse-mode autodiff over [`Tensor`] values.
//!
//! Every op evaluates immediately and appends a node to the [`Tape`].
//! [`Tape::backward`] walks the tape once in reverse and returns gradients
//! for the parameter leaves.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{gemm, CsrMatrix, Tensor};

/// Epsilon used by [`Tape::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;
/// Norm floor used by [`Tape::cosine_rows`].
pub const COSINE_EPS: f64 = 1e-8;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var, usize),
    Mean(Var, usize),
    Sum(Var, usize),
    Concat(Vec<Var>, usize),
    RowSlice(Var, usize),
    Transpose(Var),
    SpMatMul(Arc<CsrMatrix>, Var),
    SquaredFrobenius(Var),
    Hinge(Var),
    CosineRows(Var, Var),
    LayerNorm(Var),
    AdaptiveAvgPool(Var, usize),
    GatherRows(Var, Arc<Vec<usize>>),
    SegmentSum(Var, Arc<Vec<usize>>),
    SegmentSoftmax(Var, Arc<Vec<usize>>, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: bool,
}

/// Records operations for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to each parameter leaf.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    grads: BTreeMap<Var, Tensor>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(&v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor)> {
        self.grads.iter().map(|(v, t)| (*v, t))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

fn broadcast_shape(
    op: &'static str,
    a: (usize, usize),
    b: (usize, usize),
) -> Result<(usize, usize)> {
    let dim = |x: usize, y: usize| {
        if x == y || y == 1 {
            Some(x)
        } else if x == 1 {
            Some(y)
        } else {
            None
        }
    };
    match (dim(a.0, b.0), dim(a.1, b.1)) {
        (Some(r), Some(c)) => Ok((r, c)),
        _ => Err(Error::ShapeMismatch { op, lhs: a, rhs: b }),
    }
}

fn broadcast_zip(
    a: &Tensor,
    b: &Tensor,
    shape: (usize, usize),
    f: impl Fn(f64, f64) -> f64,
) -> Tensor {
    if a.shape() == b.shape() {
        return a.zip_map(b, f);
    }
    let mut out = Tensor::zeros(shape.0, shape.1);
    for r in 0..shape.0 {
        let ra = if a.rows() == 1 { 0 } else { r };
        let rb = if b.rows() == 1 { 0 } else { r };
        for c in 0..shape.1 {
            let ca = if a.cols() == 1 { 0 } else { c };
            let cb = if b.cols() == 1 { 0 } else { c };
            out.set(r, c, f(a.get(ra, ca), b.get(rb, cb)));
        }
    }
    out
}

/// Sums `g` down to `shape` along broadcast dimensions.
fn reduce_to(g: &Tensor, shape: (usize, usize)) -> Tensor {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = Tensor::zeros(shape.0, shape.1);
    for r in 0..g.rows() {
        let ro = if shape.0 == 1 { 0 } else { r };
        for c in 0..g.cols() {
            let co = if shape.1 == 1 { 0 } else { c };
            let v = out.get(ro, co) + g.get(r, c);
            out.set(ro, co, v);
        }
    }
    out
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Bin `[start, end)` of adaptive average pooling for output index `j`.
pub fn pool_bin(j: usize, d_in: usize, d_out: usize) -> (usize, usize) {
    let start = (j * d_in) / d_out;
    let end = ((j + 1) * d_in).div_ceil(d_out);
    (start, end)
}

fn check_axis(axis: usize) -> Result<()> {
    if axis > 1 {
        return Err(Error::invalid(format!(
            "axis {axis} out of range for a 2-D tensor"
        )));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
            param: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Adds a constant leaf.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
            param: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::CosineRows(a, b) => self.rg(*a) || self.rg(*b),
            Op::Concat(vs, _) => vs.iter().any(|v| self.rg(*v)),
            Op::Scale(a, _)
            | Op::Sigmoid(a)
            | Op::Relu(a)
            | Op::LeakyRelu(a, _)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Softmax(a, _)
            | Op::Mean(a, _)
            | Op::Sum(a, _)
            | Op::RowSlice(a, _)
            | Op::Transpose(a)
            | Op::SpMatMul(_, a)
            | Op::SquaredFrobenius(a)
            | Op::Hinge(a)
            | Op::LayerNorm(a)
            | Op::AdaptiveAvgPool(a, _)
            | Op::GatherRows(a, _)
            | Op::SegmentSum(a, _)
            | Op::SegmentSoftmax(a, _, _) => self.rg(*a),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    /// Elementwise `a + b` with 2-D broadcasting of unit dimensions.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = broadcast_shape("add", self.shape(a), self.shape(b))?;
        let out = broadcast_zip(self.value(a), self.value(b), shape, |x, y| x + y);
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = broadcast_shape("sub", self.shape(a), self.shape(b))?;
        let out = broadcast_zip(self.value(a), self.value(b), shape, |x, y| x - y);
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise (Hadamard) product with broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let shape = broadcast_shape("mul", self.shape(a), self.shape(b))?;
        let out = broadcast_zip(self.value(a), self.value(b), shape, |x, y| x * y);
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, alpha: f64) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { alpha * x });
        self.push(out, Op::LeakyRelu(a, alpha))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if let Some((index, &value)) = x
            .data()
            .iter()
            .enumerate()
            .find(|(_, v)| **v <= 0.0 || v.is_nan())
        {
            return Err(Error::NonPositiveLog { index, value });
        }
        let out = x.map(f64::ln);
        Ok(self.push(out, Op::Log(a)))
    }

    /// Softmax along `axis` (1 normalizes each row, 0 each column).
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        check_axis(axis)?;
        let x = if axis == 1 {
            self.value(a).clone()
        } else {
            self.value(a).transpose()
        };
        let mut out = x;
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        if axis == 0 {
            out = out.transpose();
        }
        Ok(self.push(out, Op::Softmax(a, axis)))
    }

    /// Mean along `axis`; axis 0 gives `1 x cols`, axis 1 gives `rows x 1`.
    pub fn mean(&mut self, a: Var, axis: usize) -> Result<Var> {
        check_axis(axis)?;
        let x = self.value(a);
        let n = if axis == 0 { x.rows() } else { x.cols() } as f64;
        let out = reduce_axis(x, axis).scale(1.0 / n);
        Ok(self.push(out, Op::Mean(a, axis)))
    }

    pub fn sum(&mut self, a: Var, axis: usize) -> Result<Var> {
        check_axis(axis)?;
        let out = reduce_axis(self.value(a), axis);
        Ok(self.push(out, Op::Sum(a, axis)))
    }

    /// Mean of every entry, as a 1x1 tensor.
    pub fn mean_all(&mut self, a: Var) -> Var {
        let m = self.mean(a, 0).expect("axis 0");
        self.mean(m, 1).expect("axis 1")
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.sum(a, 0).expect("axis 0");
        self.sum(s, 1).expect("axis 1")
    }

    /// Concatenates along `axis` (0 stacks rows, 1 stacks columns).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        check_axis(axis)?;
        if parts.is_empty() {
            return Err(Error::invalid("concat of zero tensors"));
        }
        let first = self.shape(parts[0]);
        for &p in &parts[1..] {
            let s = self.shape(p);
            let ok = if axis == 0 {
                s.1 == first.1
            } else {
                s.0 == first.0
            };
            if !ok {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first,
                    rhs: s,
                });
            }
        }
        let out = if axis == 0 {
            let rows: usize = parts.iter().map(|p| self.shape(*p).0).sum();
            let mut data = Vec::with_capacity(rows * first.1);
            for p in parts {
                data.extend_from_slice(self.value(*p).data());
            }
            Tensor::from_vec(rows, first.1, data)?
        } else {
            let cols: usize = parts.iter().map(|p| self.shape(*p).1).sum();
            let mut out = Tensor::zeros(first.0, cols);
            for r in 0..first.0 {
                let mut off = 0;
                for p in parts {
                    let src = self.value(*p).row(r);
                    out.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                    off += src.len();
                }
            }
            out
        };
        Ok(self.push(out, Op::Concat(parts.to_vec(), axis)))
    }

    /// Rows `start..end`.
    pub fn row_slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start > end || end > r {
            return Err(Error::ShapeMismatch {
                op: "row_slice",
                lhs: (r, c),
                rhs: (start, end),
            });
        }
        let out = Tensor::from_vec(
            end - start,
            c,
            self.value(a).data()[start * c..end * c].to_vec(),
        )?;
        Ok(self.push(out, Op::RowSlice(a, start)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    /// `s * a` for a constant sparse `s`.
    pub fn sparse_matmul(&mut self, s: &Arc<CsrMatrix>, a: Var) -> Result<Var> {
        let out = s.matmul(self.value(a))?;
        Ok(self.push(out, Op::SpMatMul(Arc::clone(s), a)))
    }

    /// Sum of squared entries, as a 1x1 tensor.
    pub fn squared_frobenius(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().map(|x| x * x).sum();
        self.push(Tensor::scalar(s), Op::SquaredFrobenius(a))
    }

    /// `max(0, a)`; the subgradient at 0 is 0.
    pub fn hinge(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Hinge(a))
    }

    /// Row-wise cosine similarity, `m x 1`. Norms are floored at [`COSINE_EPS`].
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::ShapeMismatch {
                op: "cosine_rows",
                lhs: va.shape(),
                rhs: vb.shape(),
            });
        }
        let out = (0..va.rows())
            .map(|r| {
                let (x, y) = (va.row(r), vb.row(r));
                dot(x, y) / (norm(x).max(COSINE_EPS) * norm(y).max(COSINE_EPS))
            })
            .collect();
        Ok(self.push(Tensor::column(out), Op::CosineRows(a, b)))
    }

    /// Row-wise `(x - mean) / sqrt(var + eps)` with population variance.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let n = row.len() as f64;
            let mu = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
            let s = (var + LAYER_NORM_EPS).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mu) / s;
            }
        }
        self.push(out, Op::LayerNorm(a))
    }

    /// Averages each row into `d_out` bins `[floor(j*d/d_out), ceil((j+1)*d/d_out))`.
    pub fn adaptive_avg_pool(&mut self, a: Var, d_out: usize) -> Result<Var> {
        let (rows, d) = self.shape(a);
        if d_out == 0 || d_out > d {
            return Err(Error::invalid(format!(
                "adaptive pooling needs 1 <= d_out <= d_in, got d_out={d_out}, d_in={d}"
            )));
        }
        let x = self.value(a);
        let mut out = Tensor::zeros(rows, d_out);
        for r in 0..rows {
            let row = x.row(r);
            for j in 0..d_out {
                let (s, e) = pool_bin(j, d, d_out);
                out.set(r, j, row[s..e].iter().sum::<f64>() / (e - s) as f64);
            }
        }
        Ok(self.push(out, Op::AdaptiveAvgPool(a, d_out)))
    }

    /// Rows of `a` selected by `idx` (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, idx: &Arc<Vec<usize>>) -> Result<Var> {
        let rows = self.shape(a).0;
        if let Some(&bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::ShapeMismatch {
                op: "gather_rows",
                lhs: self.shape(a),
                rhs: (bad, 0),
            });
        }
        let out = self.value(a).select_rows(idx);
        Ok(self.push(out, Op::GatherRows(a, Arc::clone(idx))))
    }

    /// Sums row `e` of `a` into output row `seg[e]`; output has `n` rows.
    pub fn segment_sum(&mut self, a: Var, seg: &Arc<Vec<usize>>, n: usize) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        if seg.len() != rows || seg.iter().any(|&s| s >= n) {
            return Err(Error::ShapeMismatch {
                op: "segment_sum",
                lhs: (rows, cols),
                rhs: (seg.len(), n),
            });
        }
        let x = self.value(a);
        let mut out = Tensor::zeros(n, cols);
        for (e, &s) in seg.iter().enumerate() {
            for (o, v) in out.row_mut(s).iter_mut().zip(x.row(e)) {
                *o += v;
            }
        }
        Ok(self.push(out, Op::SegmentSum(a, Arc::clone(seg))))
    }

    /// Softmax over the rows sharing a segment id, independently per column.
    pub fn segment_softmax(&mut self, a: Var, seg: &Arc<Vec<usize>>, n: usize) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        if seg.len() != rows || seg.iter().any(|&s| s >= n) {
            return Err(Error::ShapeMismatch {
                op: "segment_softmax",
                lhs: (rows, cols),
                rhs: (seg.len(), n),
            });
        }
        let x = self.value(a);
        let mut mx = Tensor::full(n, cols, f64::NEG_INFINITY);
        for (e, &s) in seg.iter().enumerate() {
            for c in 0..cols {
                mx.set(s, c, mx.get(s, c).max(x.get(e, c)));
            }
        }
        let mut out = Tensor::zeros(rows, cols);
        let mut tot = Tensor::zeros(n, cols);
        for (e, &s) in seg.iter().enumerate() {
            for c in 0..cols {
                let v = (x.get(e, c) - mx.get(s, c)).exp();
                out.set(e, c, v);
                tot.set(s, c, tot.get(s, c) + v);
            }
        }
        for (e, &s) in seg.iter().enumerate() {
            for c in 0..cols {
                out.set(e, c, out.get(e, c) / tot.get(s, c));
            }
        }
        Ok(self.push(out, Op::SegmentSoftmax(a, Arc::clone(seg), n)))
    }

    /// Sign pattern of every ReLU, LeakyReLU and hinge input on the tape.
    pub fn kink_signature(&self) -> Vec<bool> {
        let mut sig = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(a) | Op::LeakyRelu(a, _) | Op::Hinge(a) = node.op {
                sig.extend(self.value(a).data().iter().map(|&x| x > 0.0));
            }
        }
        sig
    }

    /// Reverse pass from a 1x1 `loss`. Every parameter leaf gets a gradient,
    /// zero if it does not influence the loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].param {
                grads[i] = Some(g);
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
        }
        let mut out = Gradients::default();
        for (i, node) in self.nodes.iter().enumerate() {
            if node.param {
                let g = grads
                    .get_mut(i)
                    .and_then(Option::take)
                    .unwrap_or_else(|| Tensor::zeros(node.value.rows(), node.value.cols()));
                out.grads.insert(Var(i), g);
            }
        }
        Ok(out)
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    self.acc(grads, *a, gemm(g, false, self.value(*b), true));
                }
                if self.rg(*b) {
                    self.acc(grads, *b, gemm(self.value(*a), true, g, false));
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, reduce_to(g, self.shape(*a)));
                self.acc(grads, *b, reduce_to(g, self.shape(*b)));
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, reduce_to(g, self.shape(*a)));
                self.acc(grads, *b, reduce_to(g, self.shape(*b)).scale(-1.0));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let t = broadcast_zip(g, self.value(*b), g.shape(), |x, y| x * y);
                    self.acc(grads, *a, reduce_to(&t, self.shape(*a)));
                }
                if self.rg(*b) {
                    let t = broadcast_zip(g, self.value(*a), g.shape(), |x, y| x * y);
                    self.acc(grads, *b, reduce_to(&t, self.shape(*b)));
                }
            }
            Op::Scale(a, s) => self.acc(grads, *a, g.scale(*s)),
            Op::Sigmoid(a) => self.acc(grads, *a, g.zip_map(y, |g, y| g * y * (1.0 - y))),
            Op::Relu(a) | Op::Hinge(a) => {
                let t = g.zip_map(self.value(*a), |g, x| if x > 0.0 { g } else { 0.0 });
                self.acc(grads, *a, t);
            }
            Op::LeakyRelu(a, alpha) => {
                let t = g.zip_map(self.value(*a), |g, x| if x > 0.0 { g } else { alpha * g });
                self.acc(grads, *a, t);
            }
            Op::Tanh(a) => self.acc(grads, *a, g.zip_map(y, |g, y| g * (1.0 - y * y))),
            Op::Exp(a) => self.acc(grads, *a, g.zip_map(y, |g, y| g * y)),
            Op::Log(a) => self.acc(grads, *a, g.zip_map(self.value(*a), |g, x| g / x)),
            Op::Softmax(a, axis) => {
                let (gt, yt) = if *axis == 1 {
                    (g.clone(), y.clone())
                } else {
                    (g.transpose(), y.transpose())
                };
                let mut out = Tensor::zeros(gt.rows(), gt.cols());
                for r in 0..gt.rows() {
                    let s = dot(gt.row(r), yt.row(r));
                    for c in 0..gt.cols() {
                        out.set(r, c, yt.get(r, c) * (gt.get(r, c) - s));
                    }
                }
                if *axis == 0 {
                    out = out.transpose();
                }
                self.acc(grads, *a, out);
            }
            Op::Mean(a, axis) | Op::Sum(a, axis) => {
                let (rows, cols) = self.shape(*a);
                let k = match self.nodes[i].op {
                    Op::Mean(..) => 1.0 / if *axis == 0 { rows } else { cols } as f64,
                    _ => 1.0,
                };
                let mut out = Tensor::zeros(rows, cols);
                for r in 0..rows {
                    for c in 0..cols {
                        let gv = if *axis == 0 { g.get(0, c) } else { g.get(r, 0) };
                        out.set(r, c, gv * k);
                    }
                }
                self.acc(grads, *a, out);
            }
            Op::Concat(parts, axis) => {
                let mut off = 0;
                for p in parts {
                    let (pr, pc) = self.shape(*p);
                    if self.rg(*p) {
                        let mut t = Tensor::zeros(pr, pc);
                        for r in 0..pr {
                            for c in 0..pc {
                                let v = if *axis == 0 {
                                    g.get(off + r, c)
                                } else {
                                    g.get(r, off + c)
                                };
                                t.set(r, c, v);
                            }
                        }
                        self.acc(grads, *p, t);
                    }
                    off += if *axis == 0 { pr } else { pc };
                }
            }
            Op::RowSlice(a, start) => {
                let (rows, cols) = self.shape(*a);
                let mut t = Tensor::zeros(rows, cols);
                t.data_mut()[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                self.acc(grads, *a, t);
            }
            Op::Transpose(a) => self.acc(grads, *a, g.transpose()),
            Op::SpMatMul(s, a) => self.acc(grads, *a, s.t_matmul(g)),
            Op::SquaredFrobenius(a) => {
                let k = 2.0 * g.item();
                self.acc(grads, *a, self.value(*a).scale(k));
            }
            Op::CosineRows(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let mut ga = Tensor::zeros(va.rows(), va.cols());
                let mut gb = Tensor::zeros(vb.rows(), vb.cols());
                for r in 0..va.rows() {
                    let (x, z) = (va.row(r), vb.row(r));
                    let (nx, nz) = (norm(x), norm(z));
                    let (dx, dz) = (nx.max(COSINE_EPS), nz.max(COSINE_EPS));
                    let c = y.get(r, 0);
                    let gr = g.get(r, 0);
                    let kx = if nx > COSINE_EPS { c / (dx * dx) } else { 0.0 };
                    let kz = if nz > COSINE_EPS { c / (dz * dz) } else { 0.0 };
                    let inv = 1.0 / (dx * dz);
                    for j in 0..x.len() {
                        ga.set(r, j, gr * (z[j] * inv - kx * x[j]));
                        gb.set(r, j, gr * (x[j] * inv - kz * z[j]));
                    }
                }
                self.acc(grads, *a, ga);
                self.acc(grads, *b, gb);
            }
            Op::LayerNorm(a) => {
                let x = self.value(*a);
                let mut out = Tensor::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let row = x.row(r);
                    let n = row.len() as f64;
                    let mu = row.iter().sum::<f64>() / n;
                    let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
                    let s = (var + LAYER_NORM_EPS).sqrt();
                    let (gr, yr) = (g.row(r), y.row(r));
                    let gm = gr.iter().sum::<f64>() / n;
                    let gym = dot(gr, yr) / n;
                    for c in 0..row.len() {
                        out.set(r, c, (gr[c] - gm - yr[c] * gym) / s);
                    }
                }
                self.acc(grads, *a, out);
            }
            Op::AdaptiveAvgPool(a, d_out) => {
                let (rows, d) = self.shape(*a);
                let mut out = Tensor::zeros(rows, d);
                for r in 0..rows {
                    for j in 0..*d_out {
                        let (s, e) = pool_bin(j, d, *d_out);
                        let v = g.get(r, j) / (e - s) as f64;
                        for c in s..e {
                            out.set(r, c, out.get(r, c) + v);
                        }
                    }
                }
                self.acc(grads, *a, out);
            }
            Op::GatherRows(a, idx) => {
                let (rows, cols) = self.shape(*a);
                let mut out = Tensor::zeros(rows, cols);
                for (o, &src) in idx.iter().enumerate() {
                    for (d, v) in out.row_mut(src).iter_mut().zip(g.row(o)) {
                        *d += v;
                    }
                }
                self.acc(grads, *a, out);
            }
            Op::SegmentSum(a, seg) => {
                self.acc(grads, *a, g.select_rows(seg));
            }
            Op::SegmentSoftmax(a, seg, n) => {
                let cols = y.cols();
                let mut s = Tensor::zeros(*n, cols);
                for (e, &sg) in seg.iter().enumerate() {
                    for c in 0..cols {
                        s.set(sg, c, s.get(sg, c) + g.get(e, c) * y.get(e, c));
                    }
                }
                let mut out = Tensor::zeros(y.rows(), cols);
                for (e, &sg) in seg.iter().enumerate() {
                    for c in 0..cols {
                        out.set(e, c, y.get(e, c) * (g.get(e, c) - s.get(sg, c)));
                    }
                }
                self.acc(grads, *a, out);
            }
        }
    }
}

fn reduce_axis(x: &Tensor, axis: usize) -> Tensor {
    if axis == 0 {
        let mut out = Tensor::zeros(1, x.cols());
        for r in 0..x.rows() {
            for (o, v) in out.row_mut(0).iter_mut().zip(x.row(r)) {
                *o += v;
            }
        }
        out
    } else {
        Tensor::column((0..x.rows()).map(|r| x.row(r).iter().sum()).collect())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Outcome of [`grad_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// `max |analytic - numeric| / max(1e-8, |numeric|)` over checked entries.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Entries whose perturbation crossed a ReLU or hinge kink.
    pub skipped: usize,
}

/// One parameter entry compared by [`gradient_entries`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradEntry {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Loss value at the unperturbed point.
    pub value: f64,
    /// The perturbation crossed a ReLU or hinge kink.
    pub kinked: bool,
}

impl GradEntry {
    pub fn rel_error(&self) -> f64 {
        (self.analytic - self.numeric).abs() / self.numeric.abs().max(1e-8)
    }
}

/// Backward gradients of `f` next to central differences, entry by entry.
///
/// `f` builds a scalar loss on a fresh tape from the parameter handles.
pub fn gradient_entries<F>(f: F, params: &[Tensor], step: f64) -> Result<Vec<GradEntry>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let eval = |ps: &[Tensor]| -> Result<(f64, Vec<bool>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        let v = tape.value(loss);
        if v.shape() != (1, 1) {
            return Err(Error::NonScalarLoss(v.shape()));
        }
        if !v.item().is_finite() {
            return Err(Error::NonFinite);
        }
        Ok((v.item(), tape.kink_signature()))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    if !tape.value(loss).all_finite() {
        return Err(Error::NonFinite);
    }
    let value = tape.value(loss).item();
    let base_sig = tape.kink_signature();
    let grads = tape.backward(loss)?;

    let mut out = Vec::new();
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var).expect("every param has a gradient");
        for k in 0..params[pi].len() {
            let orig = params[pi].data()[k];
            work[pi].data_mut()[k] = orig + step;
            let (fp, sp) = eval(&work)?;
            work[pi].data_mut()[k] = orig - step;
            let (fm, sm) = eval(&work)?;
            work[pi].data_mut()[k] = orig;
            out.push(GradEntry {
                param: pi,
                index: k,
                analytic: analytic.data()[k],
                numeric: (fp - fm) / (2.0 * step),
                value,
                kinked: sp != base_sig || sm != base_sig,
            });
        }
    }
    Ok(out)
}

/// Compares backward gradients of `f` against central differences,
/// skipping entries whose perturbation crosses a kink.
pub fn grad_check<F>(f: F, params: &[Tensor], step: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut report = GradCheck {
        max_rel_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    for e in gradient_entries(f, params, step)? {
        if e.kinked {
            report.skipped += 1;
        } else {
            report.max_rel_error = report.max_rel_error.max(e.rel_error());
            report.checked += 1;
        }
    }
    Ok(report)
}
