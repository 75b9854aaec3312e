//! Reverse-mode differentiation over an explicit tape of primitive ops.
//!
//! Every op appends a node holding its forward value. Node ids increase
//! with creation order, so walking the tape backwards is a valid reverse
//! topological order.

use std::rc::Rc;

use super::tensor::Tensor2;
use crate::error::{Error, Result};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;
pub const DEFAULT_LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
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
    Transpose(Var),
    ConcatRows(Vec<Var>),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    MeanRows(Var),
    L2NormalizeRows(Var),
    Dot(Var, Var),
    AddRowBroadcast(Var, Var),
    OuterSum(Var, Var),
    GatherRows(Var, Rc<[usize]>),
    MaskedSoftmaxRows(Var, Rc<[bool]>),
    MaskedLogSumExpRows(Var, Rc<[bool]>),
    LayerNormRows {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Tensor2,
        inv_std: Vec<f64>,
    },
    MeanAll(Var),
    SumAll(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor2,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor2>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor2> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor2> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn same_shape(op: &'static str, a: &Tensor2, b: &Tensor2) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax over the masked entries of `scores`; unmasked entries are 0.
pub fn masked_normalize(scores: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if scores.len() != mask.len() {
        return Err(Error::shape(
            "masked_normalize",
            format!("{} scores vs {} mask bits", scores.len(), mask.len()),
        ));
    }
    let max = scores
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&s, _)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::InvalidArgument(
            "masked_normalize: empty mask".into(),
        ));
    }
    let mut out: Vec<f64> = scores
        .iter()
        .zip(mask)
        .map(|(&s, &m)| if m { (s - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    Ok(out)
}

fn masked_logsumexp(scores: &[f64], mask: &[bool]) -> Option<f64> {
    let max = scores
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&s, _)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let sum: f64 = scores
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&s, _)| (s - max).exp())
        .sum();
    Some(max + sum.ln())
}

fn layer_norm_forward(
    x: &Tensor2,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> (Tensor2, Tensor2, Vec<f64>) {
    let (rows, cols) = x.shape();
    let mut xhat = Tensor2::zeros(rows, cols);
    let mut out = Tensor2::zeros(rows, cols);
    let mut inv_std = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
        let is = 1.0 / (var + eps).sqrt();
        inv_std.push(is);
        for c in 0..cols {
            let h = (row[c] - mean) * is;
            xhat.set(r, c, h);
            out.set(r, c, h * gamma[c] + beta[c]);
        }
    }
    (out, xhat, inv_std)
}

/// Row-wise layer normalization of a single vector with population variance.
pub fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Result<Vec<f64>> {
    if x.len() != gamma.len() || x.len() != beta.len() || x.is_empty() {
        return Err(Error::shape(
            "layer_norm",
            format!("x {} gamma {} beta {}", x.len(), gamma.len(), beta.len()),
        ));
    }
    let t = Tensor2::row_vector(x.to_vec());
    Ok(layer_norm_forward(&t, gamma, beta, eps).0.into_data())
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor2, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Differentiable input.
    pub fn param(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), g))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), g))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Sub(a, b), g))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a, b), g))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        let g = self.needs(a);
        self.push(value, Op::Scale(a, s), g)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let g = self.needs(a);
        self.push(value, Op::Transpose(a), g)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::shape("concat_rows", "no operands"));
        };
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let t = self.value(*p);
            if t.cols() != cols {
                return Err(Error::shape(
                    "concat_rows",
                    format!("column count {} vs {}", t.cols(), cols),
                ));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let g = parts.iter().any(|p| self.needs(*p));
        let value = Tensor2::new(rows, cols, data)?;
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), g))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let g = self.needs(a);
        self.push(value, Op::Sigmoid(a), g)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        let g = self.needs(a);
        self.push(value, Op::LeakyRelu(a, slope), g)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let g = self.needs(a);
        self.push(value, Op::Tanh(a), g)
    }

    /// Column means: `n x c -> 1 x c`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        if self.value(a).rows() == 0 {
            return Err(Error::shape("mean_rows", "zero rows"));
        }
        let value = self.value(a).mean_rows();
        let g = self.needs(a);
        Ok(self.push(value, Op::MeanRows(a), g))
    }

    /// Scales every row to unit L2 norm; all-zero rows stay zero.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut value = x.clone();
        for r in 0..x.rows() {
            let norm = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for v in value.row_mut(r) {
                    *v /= norm;
                }
            }
        }
        let g = self.needs(a);
        self.push(value, Op::L2NormalizeRows(a), g)
    }

    /// Frobenius inner product of two same-shape tensors, as `1 x 1`.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("dot", self.value(a), self.value(b))?;
        let v: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .sum();
        let g = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor2::scalar(v), Op::Dot(a, b), g))
    }

    /// `x (n x c) + b (1 x c)` broadcast over rows.
    pub fn add_row_broadcast(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xt, bt) = (self.value(x), self.value(b));
        if bt.rows() != 1 || bt.cols() != xt.cols() {
            return Err(Error::shape(
                "add_row_broadcast",
                format!("{:?} + {:?}", xt.shape(), bt.shape()),
            ));
        }
        let mut value = xt.clone();
        for r in 0..value.rows() {
            for (v, add) in value.row_mut(r).iter_mut().zip(bt.data()) {
                *v += add;
            }
        }
        let g = self.needs(x) || self.needs(b);
        Ok(self.push(value, Op::AddRowBroadcast(x, b), g))
    }

    /// `out[i][j] = u[i] + v[j]` for column vectors `u (n x 1)`, `v (m x 1)`.
    pub fn outer_sum(&mut self, u: Var, v: Var) -> Result<Var> {
        let (ut, vt) = (self.value(u), self.value(v));
        if ut.cols() != 1 || vt.cols() != 1 {
            return Err(Error::shape(
                "outer_sum",
                format!("{:?} (+) {:?}", ut.shape(), vt.shape()),
            ));
        }
        let value = Tensor2::from_fn(ut.rows(), vt.rows(), |i, j| ut.get(i, 0) + vt.get(j, 0));
        let g = self.needs(u) || self.needs(v);
        Ok(self.push(value, Op::OuterSum(u, v), g))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if let Some(bad) = idx.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::shape(
                "gather_rows",
                format!("row {bad} of {:?}", t.shape()),
            ));
        }
        let value = t.select_rows(idx);
        let g = self.needs(a);
        Ok(self.push(value, Op::GatherRows(a, idx.into()), g))
    }

    /// Row-wise softmax restricted to `mask` (row-major, same shape as `a`).
    /// Every row needs at least one masked entry.
    pub fn masked_softmax_rows(&mut self, a: Var, mask: Rc<[bool]>) -> Result<Var> {
        let t = self.value(a);
        if mask.len() != t.rows() * t.cols() {
            return Err(Error::shape(
                "masked_softmax_rows",
                format!("mask of {} for {:?}", mask.len(), t.shape()),
            ));
        }
        let cols = t.cols();
        let mut data = Vec::with_capacity(mask.len());
        for r in 0..t.rows() {
            data.extend(masked_normalize(t.row(r), &mask[r * cols..(r + 1) * cols])?);
        }
        let value = Tensor2::new(t.rows(), cols, data)?;
        let g = self.needs(a);
        Ok(self.push(value, Op::MaskedSoftmaxRows(a, mask), g))
    }

    /// `n x c -> n x 1` log-sum-exp over masked entries; empty rows give 0.
    pub fn masked_logsumexp_rows(&mut self, a: Var, mask: Rc<[bool]>) -> Result<Var> {
        let t = self.value(a);
        if mask.len() != t.rows() * t.cols() {
            return Err(Error::shape(
                "masked_logsumexp_rows",
                format!("mask of {} for {:?}", mask.len(), t.shape()),
            ));
        }
        let cols = t.cols();
        let data = (0..t.rows())
            .map(|r| masked_logsumexp(t.row(r), &mask[r * cols..(r + 1) * cols]).unwrap_or(0.0))
            .collect();
        let value = Tensor2::new(t.rows(), 1, data)?;
        let g = self.needs(a);
        Ok(self.push(value, Op::MaskedLogSumExpRows(a, mask), g))
    }

    /// Per-row layer normalization with `1 x c` gain and bias.
    pub fn layer_norm_rows(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (xt, gt, bt) = (self.value(x), self.value(gamma), self.value(beta));
        if gt.shape() != (1, xt.cols()) || bt.shape() != (1, xt.cols()) || xt.cols() == 0 {
            return Err(Error::shape(
                "layer_norm_rows",
                format!(
                    "x {:?} gamma {:?} beta {:?}",
                    xt.shape(),
                    gt.shape(),
                    bt.shape()
                ),
            ));
        }
        let (value, xhat, inv_std) = layer_norm_forward(xt, gt.data(), bt.data(), eps);
        let g = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            value,
            Op::LayerNormRows {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            g,
        ))
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.data().is_empty() {
            return Err(Error::shape("mean_all", "empty tensor"));
        }
        let v = t.sum() / t.data().len() as f64;
        let g = self.needs(a);
        Ok(self.push(Tensor2::scalar(v), Op::MeanAll(a), g))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = self.value(a).sum();
        let g = self.needs(a);
        self.push(Tensor2::scalar(v), Op::SumAll(a), g)
    }

    /// Gradients of the `1 x 1` node `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.shape() != (1, 1) {
            return Err(Error::shape(
                "backward",
                format!("loss must be 1x1, got {:?}", lt.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor2>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor2::scalar(1.0));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor2, grads: &mut [Option<Tensor2>]) {
        let mut acc = |v: Var, contrib: Tensor2| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&contrib),
                slot => *slot = Some(contrib),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    acc(
                        *a,
                        g.matmul(&val(*b).transpose())
                            .expect("shapes checked in forward"),
                    );
                }
                if self.needs(*b) {
                    acc(
                        *b,
                        val(*a)
                            .transpose()
                            .matmul(g)
                            .expect("shapes checked in forward"),
                    );
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(val(*b), |x, y| x * y));
                acc(*b, g.zip_map(val(*a), |x, y| x * y));
            }
            Op::Scale(a, s) => acc(*a, g.scale(*s)),
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for p in parts {
                    let rows = val(*p).rows();
                    let idx: Vec<usize> = (start..start + rows).collect();
                    acc(*p, g.select_rows(&idx));
                    start += rows;
                }
            }
            Op::Sigmoid(a) => acc(*a, g.zip_map(&node.value, |g, y| g * y * (1.0 - y))),
            Op::LeakyRelu(a, slope) => acc(
                *a,
                g.zip_map(val(*a), |g, x| if x > 0.0 { g } else { g * slope }),
            ),
            Op::Tanh(a) => acc(*a, g.zip_map(&node.value, |g, y| g * (1.0 - y * y))),
            Op::MeanRows(a) => {
                let rows = val(*a).rows();
                let scaled = g.scale(1.0 / rows as f64);
                acc(
                    *a,
                    Tensor2::from_fn(rows, g.cols(), |_, j| scaled.get(0, j)),
                );
            }
            Op::L2NormalizeRows(a) => {
                let x = val(*a);
                let y = &node.value;
                let mut out = Tensor2::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    let norm = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm == 0.0 {
                        continue;
                    }
                    let yg: f64 = y.row(r).iter().zip(g.row(r)).map(|(a, b)| a * b).sum();
                    for (c, o) in out.row_mut(r).iter_mut().enumerate() {
                        *o = (g.get(r, c) - y.get(r, c) * yg) / norm;
                    }
                }
                acc(*a, out);
            }
            Op::Dot(a, b) => {
                let s = g.item();
                acc(*a, val(*b).scale(s));
                acc(*b, val(*a).scale(s));
            }
            Op::AddRowBroadcast(x, b) => {
                acc(*x, g.clone());
                let mut db = vec![0.0; g.cols()];
                for r in 0..g.rows() {
                    for (d, v) in db.iter_mut().zip(g.row(r)) {
                        *d += v;
                    }
                }
                acc(*b, Tensor2::row_vector(db));
            }
            Op::OuterSum(u, v) => {
                let du = Tensor2::from_fn(g.rows(), 1, |i, _| g.row(i).iter().sum());
                let dv =
                    Tensor2::from_fn(g.cols(), 1, |j, _| (0..g.rows()).map(|i| g.get(i, j)).sum());
                acc(*u, du);
                acc(*v, dv);
            }
            Op::GatherRows(a, idx) => {
                let src = val(*a);
                let mut out = Tensor2::zeros(src.rows(), src.cols());
                for (k, &i) in idx.iter().enumerate() {
                    for (o, v) in out.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                acc(*a, out);
            }
            Op::MaskedSoftmaxRows(a, mask) => {
                let y = &node.value;
                let cols = y.cols();
                let mut out = Tensor2::zeros(y.rows(), cols);
                for r in 0..y.rows() {
                    let yg: f64 = y.row(r).iter().zip(g.row(r)).map(|(a, b)| a * b).sum();
                    for c in 0..cols {
                        if mask[r * cols + c] {
                            out.set(r, c, y.get(r, c) * (g.get(r, c) - yg));
                        }
                    }
                }
                acc(*a, out);
            }
            Op::MaskedLogSumExpRows(a, mask) => {
                let x = val(*a);
                let cols = x.cols();
                let mut out = Tensor2::zeros(x.rows(), cols);
                for r in 0..x.rows() {
                    let m = &mask[r * cols..(r + 1) * cols];
                    if let Ok(p) = masked_normalize(x.row(r), m) {
                        let gr = g.get(r, 0);
                        for (o, pv) in out.row_mut(r).iter_mut().zip(p) {
                            *o = gr * pv;
                        }
                    }
                }
                acc(*a, out);
            }
            Op::LayerNormRows {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gam = val(*gamma);
                let (rows, cols) = xhat.shape();
                let mut dgamma = vec![0.0; cols];
                let mut dbeta = vec![0.0; cols];
                let mut dx = Tensor2::zeros(rows, cols);
                for (r, &istd) in inv_std.iter().enumerate() {
                    let mut dxhat = vec![0.0; cols];
                    for c in 0..cols {
                        let gv = g.get(r, c);
                        dgamma[c] += gv * xhat.get(r, c);
                        dbeta[c] += gv;
                        dxhat[c] = gv * gam.get(0, c);
                    }
                    let mean_d = dxhat.iter().sum::<f64>() / cols as f64;
                    let mean_dx = dxhat
                        .iter()
                        .enumerate()
                        .map(|(c, d)| d * xhat.get(r, c))
                        .sum::<f64>()
                        / cols as f64;
                    for (c, &d) in dxhat.iter().enumerate() {
                        dx.set(r, c, istd * (d - mean_d - xhat.get(r, c) * mean_dx));
                    }
                }
                acc(*x, dx);
                acc(*gamma, Tensor2::row_vector(dgamma));
                acc(*beta, Tensor2::row_vector(dbeta));
            }
            Op::MeanAll(a) => {
                let t = val(*a);
                let n = t.data().len() as f64;
                acc(*a, Tensor2::filled(t.rows(), t.cols(), g.item() / n));
            }
            Op::SumAll(a) => {
                let t = val(*a);
                acc(*a, Tensor2::filled(t.rows(), t.cols(), g.item()));
            }
        }
    }
}
