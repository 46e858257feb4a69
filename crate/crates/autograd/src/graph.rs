//! Reverse-mode tape.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! Nodes are appended in topological order, so a backward pass is a single
//! sweep from the loss node down to index 0.

use std::sync::Arc;

use crate::error::{AdError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    Offset(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    Gather(Var, Vec<usize>),
    Pick(Var, Vec<usize>),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Clamp(Var, T, T),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
    Dropout(Var, Arc<Tensor<T>>),
    WhereRows(Vec<bool>, Var, Var),
}

struct Node<T> {
    op: Op<T>,
    value: Tensor<T>,
    needs_grad: bool,
}

/// Reverse-mode automatic differentiation tape.
pub struct Graph<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch<T>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> AdError
where
    T: Scalar,
{
    AdError::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node created after the first `len`. Handles to dropped
    /// nodes become invalid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Trainable leaf; its gradient is reported by [`Graph::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value, false)
    }

    fn unary(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let value = self.value(a).map(f);
        let ng = self.ng(&[a]);
        self.push(op, value, ng)
    }

    fn zip(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta, tb));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(ta.shape(), data)?;
        let ng = self.ng(&[a, b]);
        Ok(self.push(op, value, ng))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = {
            let (ta, tb) = (self.value(a), self.value(b));
            ta.matmul(tb).map_err(|_| mismatch("matmul", ta, tb))?
        };
        let ng = self.ng(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), value, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// Adds a bias vector of length `cols` to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if tb.len() != ta.cols() {
            return Err(mismatch("add_bias", ta, tb));
        }
        let mut value = ta.clone();
        let cols = ta.cols();
        for (i, x) in value.data_mut().iter_mut().enumerate() {
            *x = *x + tb.data()[i % cols];
        }
        let ng = self.ng(&[a, bias]);
        Ok(self.push(Op::AddBias(a, bias), value, ng))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    /// `a + c` elementwise.
    pub fn offset(&mut self, a: Var, c: T) -> Var {
        self.unary(a, Op::Offset(a), |x| x + c)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(AdError::InvalidArgument {
            op: "concat_cols",
            detail: "no inputs".into(),
        })?;
        let rows = self.value(first).rows();
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rows() != rows {
                return Err(mismatch("concat_cols", self.value(first), t));
            }
            cols += t.cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::matrix(rows, cols, data)?;
        let ng = self.ng(parts);
        Ok(self.push(Op::ConcatCols(parts.to_vec()), value, ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(AdError::InvalidArgument {
            op: "concat_rows",
            detail: "no inputs".into(),
        })?;
        let cols = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            if t.cols() != cols {
                return Err(mismatch("concat_rows", self.value(first), t));
            }
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        let value = Tensor::matrix(rows, cols, data)?;
        let ng = self.ng(parts);
        Ok(self.push(Op::ConcatRows(parts.to_vec()), value, ng))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        if start >= end || end > t.cols() {
            return Err(AdError::InvalidArgument {
                op: "slice_cols",
                detail: format!("range {start}..{end} for {} columns", t.cols()),
            });
        }
        let rows = t.rows();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&t.row(r)[start..end]);
        }
        let value = Tensor::matrix(rows, end - start, data)?;
        let ng = self.ng(&[a]);
        Ok(self.push(Op::SliceCols(a, start), value, ng))
    }

    /// Rows of `table` selected by `indices` (embedding lookup).
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let bound = t.rows();
        if indices.is_empty() {
            return Err(AdError::InvalidArgument {
                op: "gather",
                detail: "no indices".into(),
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= bound) {
            return Err(AdError::IndexOutOfRange {
                op: "gather",
                index: bad,
                bound,
            });
        }
        let mut data = Vec::with_capacity(indices.len() * t.cols());
        for &i in indices {
            data.extend_from_slice(t.row(i));
        }
        let value = Tensor::matrix(indices.len(), t.cols(), data)?;
        let ng = self.ng(&[table]);
        Ok(self.push(Op::Gather(table, indices.to_vec()), value, ng))
    }

    /// One element per row: `out[r] = a[r, indices[r]]`, shape `rows x 1`.
    pub fn pick(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if indices.len() != t.rows() {
            return Err(AdError::InvalidArgument {
                op: "pick",
                detail: format!("{} indices for {} rows", indices.len(), t.rows()),
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= t.cols()) {
            return Err(AdError::IndexOutOfRange {
                op: "pick",
                index: bad,
                bound: t.cols(),
            });
        }
        let data = indices
            .iter()
            .enumerate()
            .map(|(r, &c)| t.get(r, c))
            .collect();
        let value = Tensor::matrix(indices.len(), 1, data)?;
        let ng = self.ng(&[a]);
        Ok(self.push(Op::Pick(a, indices.to_vec()), value, ng))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), |x| T::one() / (T::one() + (-x).exp()))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), |x| x.tanh())
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), |x| x.exp())
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), |x| x.ln())
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    /// Elementwise clamp to `[lo, hi]`; the gradient is zero outside.
    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.max(lo).min(hi))
    }

    /// Row-wise softmax, stabilized by subtracting the row maximum.
    pub fn softmax(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        let ng = self.ng(&[a]);
        self.push(Op::Softmax(a), value, ng)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut value = t.clone();
        for r in 0..t.rows() {
            let row = value.row_mut(r);
            let lse = logsumexp(row);
            for x in row.iter_mut() {
                *x = T::of(x.as_f64() - lse);
            }
        }
        let ng = self.ng(&[a]);
        self.push(Op::LogSoftmax(a), value, ng)
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(T::of(self.value(a).sum_f64()));
        let ng = self.ng(&[a]);
        self.push(Op::Sum(a), value, ng)
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor::scalar(T::of(t.sum_f64() / t.len() as f64));
        let ng = self.ng(&[a]);
        self.push(Op::Mean(a), value, ng)
    }

    /// Multiplies `x` by a precomputed dropout mask (entries `0` or `1/(1-p)`).
    pub fn dropout(&mut self, x: Var, mask: Arc<Tensor<T>>) -> Result<Var> {
        let t = self.value(x);
        if t.shape() != mask.shape() {
            return Err(mismatch("dropout", t, &mask));
        }
        let data = t
            .data()
            .iter()
            .zip(mask.data())
            .map(|(&a, &m)| a * m)
            .collect();
        let value = Tensor::new(t.shape(), data)?;
        let ng = self.ng(&[x]);
        Ok(self.push(Op::Dropout(x, mask), value, ng))
    }

    /// Row `r` of the result is row `r` of `a` when `take_a[r]`, else of `b`.
    pub fn where_rows(&mut self, take_a: &[bool], a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() || take_a.len() != ta.rows() {
            return Err(mismatch("where_rows", ta, tb));
        }
        let mut value = tb.clone();
        for (r, &pick_a) in take_a.iter().enumerate() {
            if pick_a {
                value.row_mut(r).copy_from_slice(ta.row(r));
            }
        }
        let ng = self.ng(&[a, b]);
        Ok(self.push(Op::WhereRows(take_a.to_vec(), a, b), value, ng))
    }

    /// Gradients of a scalar `loss` with respect to every node that needs one.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let grads = self.propagate(loss, |_| false)?;
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    /// Gradients of `loss` with respect to the intermediate nodes `stops`,
    /// without propagating past them. Nodes that `loss` does not depend on
    /// get a zero gradient.
    pub fn backward_to(&self, loss: Var, stops: &[Var]) -> Result<Vec<Tensor<T>>> {
        let mut is_stop = vec![false; loss.0 + 1];
        for s in stops {
            if s.0 <= loss.0 {
                is_stop[s.0] = true;
            }
        }
        let grads = self.propagate(loss, |i| is_stop[i])?;
        Ok(stops
            .iter()
            .map(|s| {
                grads
                    .get(s.0)
                    .and_then(|g| g.clone())
                    .unwrap_or_else(|| Tensor::zeros(self.shape(*s)))
            })
            .collect())
    }

    fn propagate(&self, loss: Var, stop: impl Fn(usize) -> bool) -> Result<Vec<Option<Tensor<T>>>> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(AdError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::ones(lv.shape()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) || stop(i) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.node_backward(node, &g, &mut grads);
        }
        Ok(grads)
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn node_backward(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let y = &node.value;
        let like = |src: &Tensor<T>, f: &dyn Fn(usize, T) -> T| -> Tensor<T> {
            let data = src.data().iter().enumerate().map(|(i, &x)| f(i, x)).collect();
            Tensor::new(src.shape(), data).expect("same shape")
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                if self.nodes[a.0].needs_grad {
                    let mut ga = Tensor::zeros(ta.shape());
                    T::gemm(m, n, k, g.data(), false, tb.data(), true, T::zero(), ga.data_mut());
                    self.accumulate(grads, *a, ga);
                }
                if self.nodes[b.0].needs_grad {
                    let mut gb = Tensor::zeros(tb.shape());
                    T::gemm(k, m, n, ta.data(), true, g.data(), false, T::zero(), gb.data_mut());
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, like(g, &|i, x| x * tb.data()[i]));
                self.accumulate(grads, *b, like(g, &|i, x| x * ta.data()[i]));
            }
            Op::Div(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, like(g, &|i, x| x / tb.data()[i]));
                self.accumulate(
                    grads,
                    *b,
                    like(g, &|i, x| {
                        let d = tb.data()[i];
                        -x * ta.data()[i] / (d * d)
                    }),
                );
            }
            Op::AddBias(a, bias) => {
                self.accumulate(grads, *a, g.clone());
                if self.nodes[bias.0].needs_grad {
                    let cols = g.cols();
                    let mut acc = vec![0.0f64; cols];
                    for (i, &x) in g.data().iter().enumerate() {
                        acc[i % cols] += x.as_f64();
                    }
                    let data = acc.into_iter().map(T::of).collect();
                    let gb = Tensor::new(self.shape(*bias), data).expect("bias shape");
                    self.accumulate(grads, *bias, gb);
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.map(|x| x * *c)),
            Op::Offset(a) => self.accumulate(grads, *a, g.clone()),
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let mut start = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    if self.nodes[p.0].needs_grad {
                        let mut data = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            data.extend_from_slice(&g.row(r)[start..start + w]);
                        }
                        let gp = Tensor::new(self.shape(*p), data).expect("part shape");
                        self.accumulate(grads, *p, gp);
                    }
                    start += w;
                }
            }
            Op::ConcatRows(parts) => {
                let cols = g.cols();
                let mut start = 0;
                for p in parts {
                    let n = self.value(*p).rows() * cols;
                    if self.nodes[p.0].needs_grad {
                        let data = g.data()[start..start + n].to_vec();
                        let gp = Tensor::new(self.shape(*p), data).expect("part shape");
                        self.accumulate(grads, *p, gp);
                    }
                    start += n;
                }
            }
            Op::SliceCols(a, start) => {
                let ta = self.value(*a);
                let mut ga = Tensor::zeros(ta.shape());
                let w = g.cols();
                for r in 0..g.rows() {
                    ga.row_mut(r)[*start..*start + w].copy_from_slice(g.row(r));
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Gather(table, indices) => {
                let mut gt = Tensor::zeros(self.shape(*table));
                for (r, &i) in indices.iter().enumerate() {
                    for (dst, &src) in gt.row_mut(i).iter_mut().zip(g.row(r)) {
                        *dst = *dst + src;
                    }
                }
                self.accumulate(grads, *table, gt);
            }
            Op::Pick(a, indices) => {
                let mut ga = Tensor::zeros(self.shape(*a));
                for (r, &c) in indices.iter().enumerate() {
                    ga.row_mut(r)[c] = g.data()[r];
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Sigmoid(a) => {
                let yd = y.data();
                self.accumulate(grads, *a, like(g, &|i, x| x * yd[i] * (T::one() - yd[i])));
            }
            Op::Tanh(a) => {
                let yd = y.data();
                self.accumulate(grads, *a, like(g, &|i, x| x * (T::one() - yd[i] * yd[i])));
            }
            Op::Exp(a) => {
                let yd = y.data();
                self.accumulate(grads, *a, like(g, &|i, x| x * yd[i]));
            }
            Op::Log(a) => {
                let ad = self.value(*a).data();
                self.accumulate(grads, *a, like(g, &|i, x| x / ad[i]));
            }
            Op::Square(a) => {
                let ad = self.value(*a).data();
                let two = T::of(2.0);
                self.accumulate(grads, *a, like(g, &|i, x| two * x * ad[i]));
            }
            Op::Clamp(a, lo, hi) => {
                let ad = self.value(*a).data();
                self.accumulate(
                    grads,
                    *a,
                    like(g, &|i, x| {
                        if ad[i] < *lo || ad[i] > *hi {
                            T::zero()
                        } else {
                            x
                        }
                    }),
                );
            }
            Op::Softmax(a) => {
                let mut ga = g.clone();
                for r in 0..g.rows() {
                    let yr = y.row(r);
                    let dot: f64 = g.row(r).iter().zip(yr).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
                    for (o, &yy) in ga.row_mut(r).iter_mut().zip(yr) {
                        *o = T::of(yy.as_f64() * (o.as_f64() - dot));
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::LogSoftmax(a) => {
                let mut ga = g.clone();
                for r in 0..g.rows() {
                    let total: f64 = g.row(r).iter().map(|x| x.as_f64()).sum();
                    for (o, &ly) in ga.row_mut(r).iter_mut().zip(y.row(r)) {
                        *o = T::of(o.as_f64() - ly.as_f64().exp() * total);
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Sum(a) => {
                let g0 = g.data()[0];
                self.accumulate(grads, *a, Tensor::full(self.shape(*a), g0));
            }
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                let g0 = T::of(g.data()[0].as_f64() / n);
                self.accumulate(grads, *a, Tensor::full(self.shape(*a), g0));
            }
            Op::Dropout(x, mask) => {
                let md = mask.data();
                self.accumulate(grads, *x, like(g, &|i, v| v * md[i]));
            }
            Op::WhereRows(take_a, a, b) => {
                let mut ga = g.clone();
                let mut gb = g.clone();
                for (r, &pick_a) in take_a.iter().enumerate() {
                    let zeroed = if pick_a { gb.row_mut(r) } else { ga.row_mut(r) };
                    zeroed.fill(T::zero());
                }
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
        }
    }
}

fn logsumexp<T: Scalar>(row: &[T]) -> f64 {
    let max = row.iter().map(|x| x.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = row.iter().map(|x| (x.as_f64() - max).exp()).sum();
    max + s.ln()
}

/// Row-wise numerically stable softmax on a plain tensor.
pub fn softmax_rows<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let mut out = t.clone();
    for r in 0..t.rows() {
        let row = out.row_mut(r);
        let max = row.iter().map(|x| x.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        let exps: Vec<f64> = row
            .iter()
            .map(|x| {
                let e = (x.as_f64() - max).exp();
                total += e;
                e
            })
            .collect();
        for (o, e) in row.iter_mut().zip(exps) {
            *o = T::of(e / total);
        }
    }
    out
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of `v`, or `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`; zero when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    /// Moves the gradient out, zero-filled when absent.
    pub fn take(&mut self, v: Var) -> Tensor<T> {
        self.grads
            .get_mut(v.0)
            .and_then(|g| g.take())
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}
