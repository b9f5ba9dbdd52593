//! A small reverse-mode differentiation engine over dense `f64` matrices.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value
//! and the ids of its inputs, so nodes are topologically ordered by
//! construction. [`Graph::backward`] walks the tape once in reverse.
//!
//! Tensors are at most two-dimensional for the purposes of the operations:
//! a tensor of shape `[d0, .., dn]` is viewed as `d0 * .. * d(n-1)` rows of
//! `dn` columns; a rank-0 tensor is a 1x1 matrix.
//!
//! ```
//! use aak::tensor::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.param(Tensor::vector(vec![1.0, 2.0]));
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum(sq);
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
//! ```

use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Tensor {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Shape {
                    op: "from_rows",
                    left: vec![cols],
                    right: vec![r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Tensor::matrix(rows.len(), cols, data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            n => self.shape[..n - 1].iter().product(),
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::matrix(c, r, out)
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Handle to a node of a [`Graph`].
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
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AbsDiff(Var, Var),
    AddBias(Var, Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    MaskedMean { x: Var, weights: Vec<f64>, axis: usize },
    MeanSteps { steps: Vec<Var>, weights: Tensor },
    Elu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Scale(Var, f64),
    AddScalar(Var),
    ScaleRows(Var, Vec<f64>),
    Dropout(Var, Vec<f64>),
    Sum(Var),
    SumSquares(Var),
    SegmentMax(Var, Vec<usize>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// The tape.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape {
        op,
        left: a.shape.clone(),
        right: b.shape.clone(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that does not.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        if tb.rows() != k {
            return Err(shape_err("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = ta.data[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &tb.data[p * n..(p + 1) * n];
                for (o, &y) in orow.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, out), Op::MatMul(a, b), rg))
    }

    fn zip_same(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return Err(shape_err(op, ta, tb));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor {
            shape: ta.shape.clone(),
            data,
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Sub(a, b), rg))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::Mul(a, b), rg))
    }

    /// `|a - b|` element-wise. The gradient uses `sign(a - b)` with `sign(0) = 0`.
    pub fn abs_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same("abs_diff", a, b, |x, y| (x - y).abs())?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::AbsDiff(a, b), rg))
    }

    /// Adds a bias vector to every row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let c = tx.cols();
        if tb.len() != c {
            return Err(shape_err("add_bias", tx, tb));
        }
        let mut t = tx.clone();
        for row in t.data.chunks_mut(c) {
            for (o, &b) in row.iter_mut().zip(&tb.data) {
                *o += b;
            }
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(t, Op::AddBias(x, bias), rg))
    }

    /// Stacks rows (`axis = 0`) or joins columns (`axis = 1`).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = match parts.first() {
            Some(&v) => self.value(v),
            None => return Err(Error::contract("concat of nothing")),
        };
        match axis {
            0 => {
                let cols = first.cols();
                let mut data = Vec::new();
                let mut rows = 0;
                for &p in parts {
                    let t = self.value(p);
                    if t.cols() != cols {
                        return Err(shape_err("concat", first, t));
                    }
                    rows += t.rows();
                    data.extend_from_slice(&t.data);
                }
                let rg = self.rg(parts);
                Ok(self.push(Tensor::matrix(rows, cols, data), Op::ConcatRows(parts.to_vec()), rg))
            }
            1 => {
                let rows = first.rows();
                let mut total = 0;
                for &p in parts {
                    let t = self.value(p);
                    if t.rows() != rows {
                        return Err(shape_err("concat", first, t));
                    }
                    total += t.cols();
                }
                let mut data = Vec::with_capacity(rows * total);
                for r in 0..rows {
                    for &p in parts {
                        data.extend_from_slice(self.value(p).row(r));
                    }
                }
                let rg = self.rg(parts);
                Ok(self.push(Tensor::matrix(rows, total, data), Op::ConcatCols(parts.to_vec()), rg))
            }
            _ => Err(Error::contract(format!("concat axis {axis} on a matrix"))),
        }
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        if start > end || end > t.rows() {
            return Err(Error::Shape {
                op: "slice_rows",
                left: t.shape.clone(),
                right: vec![start, end],
            });
        }
        let c = t.cols();
        let out = Tensor::matrix(end - start, c, t.data[start * c..end * c].to_vec());
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SliceRows(x, start), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(x);
        if start > end || end > t.cols() {
            return Err(Error::Shape {
                op: "slice_cols",
                left: t.shape.clone(),
                right: vec![start, end],
            });
        }
        let mut data = Vec::with_capacity(t.rows() * (end - start));
        for r in 0..t.rows() {
            data.extend_from_slice(&t.row(r)[start..end]);
        }
        let out = Tensor::matrix(t.rows(), end - start, data);
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::SliceCols(x, start), rg))
    }

    /// Row lookup; repeated indices accumulate gradient.
    pub fn gather_rows(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let c = t.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= t.rows() {
                return Err(Error::Shape {
                    op: "gather_rows",
                    left: t.shape.clone(),
                    right: vec![i],
                });
            }
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::matrix(indices.len(), c, data);
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::GatherRows(x, indices.to_vec()), rg))
    }

    /// Weighted mean along `axis` with 0/1 weights from `mask`: over rows
    /// (`axis = 0`, one weight per row) or over columns (`axis = 1`).
    pub fn masked_mean(&mut self, x: Var, mask: &[f64], axis: usize) -> Result<Var> {
        let t = self.value(x);
        let (r, c) = (t.rows(), t.cols());
        let expected = match axis {
            0 => r,
            1 => c,
            _ => return Err(Error::contract(format!("masked_mean axis {axis}"))),
        };
        if mask.len() != expected {
            return Err(Error::Shape {
                op: "masked_mean",
                left: t.shape.clone(),
                right: vec![mask.len()],
            });
        }
        let total: f64 = mask.iter().sum();
        if total == 0.0 {
            return Err(Error::contract("masked_mean over an all-padding mask"));
        }
        let weights: Vec<f64> = mask.iter().map(|m| m / total).collect();
        let out = if axis == 0 {
            let mut o = vec![0.0; c];
            for (i, &w) in weights.iter().enumerate() {
                for (acc, &v) in o.iter_mut().zip(t.row(i)) {
                    *acc += w * v;
                }
            }
            Tensor::vector(o)
        } else {
            Tensor::vector(
                (0..r)
                    .map(|i| t.row(i).iter().zip(&weights).map(|(v, w)| v * w).sum())
                    .collect(),
            )
        };
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::MaskedMean { x, weights, axis }, rg))
    }

    /// Per-row masked mean over a sequence of equally shaped steps.
    ///
    /// `mask` has one row per batch row and one column per step. Every row
    /// must have at least one non-zero entry.
    pub fn mean_steps(&mut self, steps: &[Var], mask: &Tensor) -> Result<Var> {
        let Some(&first) = steps.first() else {
            return Err(Error::contract("mean over zero steps"));
        };
        let (b, c) = (self.value(first).rows(), self.value(first).cols());
        if mask.rows() != b || mask.cols() != steps.len() {
            return Err(shape_err("mean_steps", self.value(first), mask));
        }
        let mut weights = mask.clone();
        for r in 0..b {
            let row = &mut weights.data[r * steps.len()..(r + 1) * steps.len()];
            let total: f64 = row.iter().sum();
            if total == 0.0 {
                return Err(Error::contract(format!("sequence {r} is all padding")));
            }
            row.iter_mut().for_each(|w| *w /= total);
        }
        let mut out = vec![0.0; b * c];
        for (t, &s) in steps.iter().enumerate() {
            let v = self.value(s);
            if v.rows() != b || v.cols() != c {
                return Err(shape_err("mean_steps", self.value(first), v));
            }
            for r in 0..b {
                let w = weights.data[r * steps.len() + t];
                if w == 0.0 {
                    continue;
                }
                for (o, &x) in out[r * c..(r + 1) * c].iter_mut().zip(v.row(r)) {
                    *o += w * x;
                }
            }
        }
        let rg = self.rg(steps);
        Ok(self.push(
            Tensor::matrix(b, c, out),
            Op::MeanSteps {
                steps: steps.to_vec(),
                weights,
            },
            rg,
        ))
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = self.value(x);
        let out = Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|&v| f(v)).collect(),
        };
        let rg = self.rg(&[x]);
        self.push(out, op, rg)
    }

    /// Exponential linear unit with `alpha = 1`.
    pub fn elu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Elu(x), elu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.unary(x, Op::Scale(x, factor), |v| v * factor)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::AddScalar(x), |v| v + c)
    }

    /// Multiplies row `r` by `factors[r]`.
    pub fn scale_rows(&mut self, x: Var, factors: &[f64]) -> Result<Var> {
        let t = self.value(x);
        if factors.len() != t.rows() {
            return Err(Error::Shape {
                op: "scale_rows",
                left: t.shape.clone(),
                right: vec![factors.len()],
            });
        }
        let c = t.cols();
        let mut out = t.clone();
        for (row, &f) in out.data.chunks_mut(c).zip(factors) {
            row.iter_mut().for_each(|v| *v *= f);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::ScaleRows(x, factors.to_vec()), rg))
    }

    /// Inverted dropout: at training time each entry is kept with
    /// probability `keep_prob` and scaled by `1 / keep_prob`. Returns `x`
    /// itself when not training or when `keep_prob >= 1`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, keep_prob: f64, rng: &mut R, train: bool) -> Var {
        if !train || keep_prob >= 1.0 {
            return x;
        }
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < keep_prob { 1.0 / keep_prob } else { 0.0 })
            .collect();
        let t = self.value(x);
        let out = Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().zip(&mask).map(|(v, m)| v * m).collect(),
        };
        let rg = self.rg(&[x]);
        self.push(out, Op::Dropout(x, mask), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn sum_squares(&mut self, x: Var) -> Var {
        let s = self.value(x).sum_squares();
        let rg = self.rg(&[x]);
        self.push(Tensor::scalar(s), Op::SumSquares(x), rg)
    }

    /// `lambda * sum of squared entries` over all `params`.
    pub fn l2_penalty(&mut self, params: &[Var], lambda: f64) -> Result<Var> {
        let mut total = self.constant(Tensor::scalar(0.0));
        for &p in params {
            let s = self.sum_squares(p);
            total = self.add(total, s)?;
        }
        Ok(self.scale(total, lambda))
    }

    /// Maximum over each group of flat indices; output has one entry per
    /// group. The gradient flows to the first maximal entry.
    pub fn segment_max(&mut self, x: Var, segments: &[Vec<usize>]) -> Result<Var> {
        let t = self.value(x);
        let mut out = Vec::with_capacity(segments.len());
        let mut argmax = Vec::with_capacity(segments.len());
        for seg in segments {
            let mut best: Option<usize> = None;
            for &i in seg {
                if i >= t.len() {
                    return Err(Error::Shape {
                        op: "segment_max",
                        left: t.shape.clone(),
                        right: vec![i],
                    });
                }
                if best.is_none_or(|b| t.data[i] > t.data[b]) {
                    best = Some(i);
                }
            }
            let b = best.ok_or_else(|| Error::contract("max over an empty segment"))?;
            out.push(t.data[b]);
            argmax.push(b);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::vector(out), Op::SegmentMax(x, argmax), rg))
    }

    /// Maximum over all entries, as a scalar.
    pub fn max_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let v = self.segment_max(x, &[(0..n).collect()])?;
        self.nodes[v.0].value.shape.clear();
        Ok(v)
    }

    /// Gradient of `loss` with respect to every node that requires one.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward from a non-scalar of shape {:?}",
                self.value(loss).shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient after [`Graph::backward`]; `None` if nothing flowed into `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let g = self.grads.get(v.0)?.as_ref()?;
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        Some(Tensor {
            shape: self.nodes[v.0].value.shape.clone(),
            data: g.clone(),
        })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let out = &nodes[i].value;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(slot);
        };
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                acc(*a, &mut |ga| {
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let brow = &tb.data[p * n..(p + 1) * n];
                            ga[r * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                });
                acc(*b, &mut |gb| {
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let x = ta.data[r * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for (o, &y) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *o += x * y;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |ga| add_into(ga, g));
                acc(*b, &mut |gb| gb.iter_mut().zip(g).for_each(|(o, x)| *o -= x));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                acc(*a, &mut |ga| {
                    for ((o, x), y) in ga.iter_mut().zip(g).zip(&tb.data) {
                        *o += x * y;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((o, x), y) in gb.iter_mut().zip(g).zip(&ta.data) {
                        *o += x * y;
                    }
                });
            }
            Op::AbsDiff(a, b) => {
                let (ta, tb) = (&nodes[a.0].value, &nodes[b.0].value);
                let sign: Vec<f64> = ta
                    .data
                    .iter()
                    .zip(&tb.data)
                    .map(|(x, y)| sign0(x - y))
                    .collect();
                acc(*a, &mut |ga| {
                    for ((o, x), s) in ga.iter_mut().zip(g).zip(&sign) {
                        *o += x * s;
                    }
                });
                acc(*b, &mut |gb| {
                    for ((o, x), s) in gb.iter_mut().zip(g).zip(&sign) {
                        *o -= x * s;
                    }
                });
            }
            Op::AddBias(x, b) => {
                let c = out.cols();
                acc(*x, &mut |gx| add_into(gx, g));
                acc(*b, &mut |gb| {
                    for row in g.chunks(c) {
                        add_into(gb, row);
                    }
                });
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = nodes[p.0].value.len();
                    acc(*p, &mut |gp| add_into(gp, &g[offset..offset + n]));
                    offset += n;
                }
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for p in parts {
                    let w = nodes[p.0].value.cols();
                    acc(*p, &mut |gp| {
                        for (r, row) in gp.chunks_mut(w).enumerate() {
                            add_into(row, &g[r * total + offset..r * total + offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::SliceRows(x, start) => {
                let c = out.cols();
                acc(*x, &mut |gx| add_into(&mut gx[start * c..start * c + g.len()], g));
            }
            Op::SliceCols(x, start) => {
                let w = out.cols();
                let c = nodes[x.0].value.cols();
                acc(*x, &mut |gx| {
                    for (r, grow) in g.chunks(w).enumerate() {
                        add_into(&mut gx[r * c + start..r * c + start + w], grow);
                    }
                });
            }
            Op::GatherRows(x, indices) => {
                let c = out.cols();
                acc(*x, &mut |gx| {
                    for (k, &row) in indices.iter().enumerate() {
                        add_into(&mut gx[row * c..(row + 1) * c], &g[k * c..(k + 1) * c]);
                    }
                });
            }
            Op::MaskedMean { x, weights, axis } => {
                let c = nodes[x.0].value.cols();
                acc(*x, &mut |gx| {
                    for (r, row) in gx.chunks_mut(c).enumerate() {
                        for (j, o) in row.iter_mut().enumerate() {
                            *o += if *axis == 0 { weights[r] * g[j] } else { weights[j] * g[r] };
                        }
                    }
                });
            }
            Op::MeanSteps { steps, weights } => {
                let c = out.cols();
                let n_steps = steps.len();
                for (t, s) in steps.iter().enumerate() {
                    acc(*s, &mut |gs| {
                        for (r, row) in gs.chunks_mut(c).enumerate() {
                            let w = weights.data[r * n_steps + t];
                            if w != 0.0 {
                                for (o, x) in row.iter_mut().zip(&g[r * c..(r + 1) * c]) {
                                    *o += w * x;
                                }
                            }
                        }
                    });
                }
            }
            Op::Elu(x) => {
                let y = &out.data;
                acc(*x, &mut |gx| {
                    for ((o, gv), (&yv, &xv)) in gx.iter_mut().zip(g).zip(y.iter().zip(&nodes[x.0].value.data)) {
                        *o += gv * if xv > 0.0 { 1.0 } else { yv + 1.0 };
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = &out.data;
                acc(*x, &mut |gx| {
                    for ((o, gv), &yv) in gx.iter_mut().zip(g).zip(y) {
                        *o += gv * yv * (1.0 - yv);
                    }
                });
            }
            Op::Tanh(x) => {
                let y = &out.data;
                acc(*x, &mut |gx| {
                    for ((o, gv), &yv) in gx.iter_mut().zip(g).zip(y) {
                        *o += gv * (1.0 - yv * yv);
                    }
                });
            }
            Op::Relu(x) => {
                let xs = &nodes[x.0].value.data;
                acc(*x, &mut |gx| {
                    for ((o, gv), &xv) in gx.iter_mut().zip(g).zip(xs) {
                        if xv > 0.0 {
                            *o += gv;
                        }
                    }
                });
            }
            Op::Scale(x, f) => acc(*x, &mut |gx| gx.iter_mut().zip(g).for_each(|(o, v)| *o += v * f)),
            Op::AddScalar(x) => acc(*x, &mut |gx| add_into(gx, g)),
            Op::ScaleRows(x, factors) => {
                let c = out.cols();
                acc(*x, &mut |gx| {
                    for ((row, grow), f) in gx.chunks_mut(c).zip(g.chunks(c)).zip(factors) {
                        row.iter_mut().zip(grow).for_each(|(o, v)| *o += v * f);
                    }
                });
            }
            Op::Dropout(x, mask) => {
                acc(*x, &mut |gx| {
                    for ((o, v), m) in gx.iter_mut().zip(g).zip(mask) {
                        *o += v * m;
                    }
                });
            }
            Op::Sum(x) => acc(*x, &mut |gx| gx.iter_mut().for_each(|o| *o += g[0])),
            Op::SumSquares(x) => {
                let xs = &nodes[x.0].value.data;
                acc(*x, &mut |gx| {
                    for (o, &v) in gx.iter_mut().zip(xs) {
                        *o += 2.0 * v * g[0];
                    }
                });
            }
            Op::SegmentMax(x, argmax) => {
                acc(*x, &mut |gx| {
                    for (k, &i) in argmax.iter().enumerate() {
                        gx[i] += g[k];
                    }
                });
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
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

/// Random matrix with orthonormal columns (or rows, when `rows < cols`),
/// from classical Gram-Schmidt applied twice to a Gaussian matrix.
pub fn init_orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    if rows < cols {
        return init_orthogonal(cols, rows, rng).transpose();
    }
    let mut q: Vec<Vec<f64>> = (0..cols)
        .map(|_| (0..rows).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    for j in 0..cols {
        for _ in 0..2 {
            for k in 0..j {
                let dot: f64 = q[j].iter().zip(&q[k]).map(|(a, b)| a * b).sum();
                let (head, tail) = q.split_at_mut(j);
                for (a, b) in tail[0].iter_mut().zip(&head[k]) {
                    *a -= dot * b;
                }
            }
        }
        let norm = q[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        q[j].iter_mut().for_each(|v| *v /= norm);
    }
    let mut data = vec![0.0; rows * cols];
    for (j, col) in q.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            data[i * cols + j] = v;
        }
    }
    Tensor::matrix(rows, cols, data)
}

/// Zero-mean normal draws with variance `2 / fan_in`.
pub fn init_he<R: Rng + ?Sized>(fan_in: usize, shape: &[usize], rng: &mut R) -> Tensor {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
    let n = shape.iter().product();
    Tensor {
        shape: shape.to_vec(),
        data: (0..n).map(|_| normal.sample(rng)).collect(),
    }
}

/// Uniform draws from `[lo, hi)`.
pub fn init_uniform<R: Rng + ?Sized>(lo: f64, hi: f64, shape: &[usize], rng: &mut R) -> Tensor {
    let dist = Uniform::new(lo, hi).expect("lo < hi");
    let n = shape.iter().product();
    Tensor {
        shape: shape.to_vec(),
        data: (0..n).map(|_| dist.sample(rng)).collect(),
    }
}

pub fn init_normal<R: Rng + ?Sized>(std: f64, shape: &[usize], rng: &mut R) -> Tensor {
    let normal = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    Tensor {
        shape: shape.to_vec(),
        data: (0..n).map(|_| normal.sample(rng)).collect(),
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AAKTNSR\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Writes named tensors: magic, version, then per tensor the name length,
/// name bytes, rank, dimensions and little-endian `f64` data.
pub fn write_tensors<W: Write>(mut w: W, tensors: &[(String, Tensor)]) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
        for &d in &t.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut out = Vec::new();
    while cur.pos < bytes.len() {
        let name_len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = cur.take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        out.push((name, Tensor { shape, data }));
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Sidecar description of a checkpoint.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

impl CheckpointManifest {
    pub fn describe(tensors: &[(String, Tensor)]) -> Self {
        CheckpointManifest {
            version: CHECKPOINT_VERSION,
            tensors: tensors
                .iter()
                .map(|(name, t)| TensorEntry {
                    name: name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn elu_values() {
        assert_eq!(elu(0.0), 0.0);
        assert_eq!(elu(1.0), 1.0);
        assert!((elu(-1.0) - (-0.632_120_558_828_557_7)).abs() < 1e-15);
    }

    #[test]
    fn masked_mean_skips_padding() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![0.0, 0.0]]).unwrap());
        let m = g.masked_mean(x, &[1.0, 1.0, 0.0], 0).unwrap();
        assert_eq!(g.value(m).data(), &[2.0, 3.0]);
        assert!(g.masked_mean(x, &[0.0, 0.0, 0.0], 0).is_err());
    }

    #[test]
    fn square_sum_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 2.0]));
        let y = g.mul(x, x).unwrap();
        let l = g.sum(y);
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn abs_diff_tie_has_zero_gradient() {
        let mut g = Graph::new();
        let a = g.param(Tensor::vector(vec![0.5, -1.0]));
        let b = g.param(Tensor::vector(vec![0.5, -1.0]));
        let d = g.abs_diff(a, b).unwrap();
        let l = g.sum(d);
        g.backward(l).unwrap();
        assert_eq!(g.grad(a).unwrap().data(), &[0.0, 0.0]);
        assert_eq!(g.grad(b).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_backward_is_a_contract_error() {
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert_eq!(err, "dimension mismatch in matmul: [2, 3] vs [2, 3]");
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::new();
        let x = g.param(Tensor::vector(vec![1.0; 20]));
        assert_eq!(g.dropout(x, 0.5, &mut rng, false), x);
        assert_eq!(g.dropout(x, 1.0, &mut rng, true), x);
        let d = g.dropout(x, 0.5, &mut rng, true);
        assert!(g.value(d).data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn concat_then_slice_recovers_parts() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let b = g.constant(Tensor::matrix(2, 1, vec![5.0, 6.0]));
        let c = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
        let a2 = g.slice_cols(c, 0, 2).unwrap();
        let b2 = g.slice_cols(c, 2, 3).unwrap();
        assert_eq!(g.value(a2), g.value(a));
        assert_eq!(g.value(b2), g.value(b));
        let r = g.concat(&[a, a], 0).unwrap();
        let lower = g.slice_rows(r, 2, 4).unwrap();
        assert_eq!(g.value(lower), g.value(a));
    }

    #[test]
    fn orthogonal_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (r, c) in [(4, 4), (7, 3), (3, 8)] {
            let w = init_orthogonal(r, c, &mut rng);
            let (small, wt) = if r >= c { (c, w.transpose()) } else { (r, w.clone()) };
            let wm = if r >= c { w.clone() } else { w.transpose() };
            for i in 0..small {
                for j in 0..small {
                    let dot: f64 = (0..wt.cols()).map(|k| wt.get(i, k) * wm.get(k, j)).sum();
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - expect).abs() < 1e-10, "{r}x{c} ({i},{j}) {dot}");
                }
            }
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_he(10, &[3, 4], &mut ChaCha8Rng::seed_from_u64(5));
        let b = init_he(10, &[3, 4], &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_round_trip() {
        let tensors = vec![
            ("w".to_string(), Tensor::matrix(2, 2, vec![1.0, -2.5, 3.25, 0.0])),
            ("b".to_string(), Tensor::scalar(0.5)),
            ("v".to_string(), Tensor::vector(vec![f64::MIN_POSITIVE, 1e300])),
        ];
        let mut buf = Vec::new();
        write_tensors(&mut buf, &tensors).unwrap();
        assert_eq!(&buf[..8], CHECKPOINT_MAGIC);
        assert_eq!(read_tensors(&buf[..]).unwrap(), tensors);
        assert!(read_tensors(&buf[..buf.len() - 3]).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_tensors(&bad[..]).is_err());
    }
}
