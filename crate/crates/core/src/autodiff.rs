//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every op appends one node holding its output value and enough saved state
//! to run its backward rule. Because nodes can only reference earlier nodes,
//! the tape is topologically ordered by construction and `backward` is a
//! single reverse sweep. Gradients from several consumers of the same node
//! accumulate additively.
//!
//! Rank-2 tensors are `[rows, cols]`; most ops also accept a rank-1 tensor as
//! a single row.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::TensorError;
use crate::rng::Rng;
use crate::tensor::{Float, Tensor};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

type OpResult = Result<Var, TensorError>;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    id: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.id
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MulRow(usize, usize),
    Scale(usize, Float),
    Sum(usize),
    Concat { inputs: Vec<usize>, axis: usize },
    Slice { input: usize, axis: usize, start: usize },
    Transpose(usize),
    Gather { input: usize, index: Vec<usize> },
    Embedding { table: usize, ids: Vec<usize> },
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Softmax { input: usize, axis: usize },
    Standardize { input: usize, sigma: Vec<Float>, denom: Vec<Float> },
    Dropout { input: usize, mask: Vec<Float> },
    CrossEntropy { logits: usize, targets: Vec<Option<usize>>, count: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation graph.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to the leaves that require them.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of a leaf; `None` when the leaf does not require grad or the
    /// loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        if var.tape != self.tape {
            return None;
        }
        self.grads.get(var.id).and_then(Option::as_ref)
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

/// Splits a shape into (outer, axis length, inner) strides around `axis`.
fn axis_strides(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn matmul_into(a: &[Float], b: &[Float], m: usize, k: usize, n: usize) -> Vec<Float> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn sigmoid(x: Float) -> Float {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean computed as an offset from the first element, so a constant row
/// yields its value exactly.
fn shifted_mean(row: &[Float]) -> Float {
    let first = row[0];
    first + row.iter().map(|&x| x - first).sum::<Float>() / row.len() as Float
}

fn softmax_rows(data: &[Float], outer: usize, n: usize, inner: usize) -> Vec<Float> {
    let mut out = vec![0.0; data.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| o * n * inner + j * inner + i;
            let max = (0..n).map(|j| data[idx(j)]).fold(Float::NEG_INFINITY, Float::max);
            let mut sum = 0.0;
            for j in 0..n {
                let e = (data[idx(j)] - max).exp();
                out[idx(j)] = e;
                sum += e;
            }
            for j in 0..n {
                out[idx(j)] /= sum;
            }
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<&Node, TensorError> {
        if v.tape != self.id || v.id >= self.nodes.len() {
            return Err(TensorError::NotOnTape(v.id));
        }
        Ok(&self.nodes[v.id])
    }

    fn node(&self, v: Var) -> Result<(&Tensor, bool), TensorError> {
        self.check(v).map(|n| (&n.value, n.needs_grad))
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        debug_assert!(
            value.all_finite(),
            "non-finite value produced by {:?}",
            std::mem::discriminant(&op)
        );
        let id = self.nodes.len();
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var { tape: self.id, id }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.id].value
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// A new constant leaf carrying `v`'s value; gradients never flow back
    /// through it.
    pub fn detach(&mut self, v: Var) -> OpResult {
        let value = self.node(v)?.0.clone();
        Ok(self.constant(value))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> OpResult {
        let (ta, ga) = self.node(a)?;
        let (tb, gb) = self.node(b)?;
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(shape_err("matmul", ta, tb));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let out = matmul_into(ta.data(), tb.data(), m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a.id, b.id), ga || gb))
    }

    fn zip_same(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(Float, Float) -> Float,
    ) -> Result<(Tensor, bool), TensorError> {
        let (ta, ga) = self.node(a)?;
        let (tb, gb) = self.node(b)?;
        if ta.shape() != tb.shape() {
            return Err(shape_err(op, ta, tb));
        }
        let out = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok((Tensor::new(ta.shape().to_vec(), out)?, ga || gb))
    }

    /// Whether `b` can be broadcast over the rows of `a`.
    fn row_broadcast(&self, a: Var, b: Var) -> Result<bool, TensorError> {
        let (ta, _) = self.node(a)?;
        let (tb, _) = self.node(b)?;
        if ta.shape() == tb.shape() {
            return Ok(false);
        }
        let cols = *ta.shape().last().unwrap();
        let b_is_row = match tb.shape() {
            [n] => *n == cols,
            [1, n] => *n == cols,
            _ => false,
        };
        if ta.rank() == 2 && b_is_row {
            Ok(true)
        } else {
            Err(shape_err("broadcast", ta, tb))
        }
    }

    fn zip_row(
        &mut self,
        a: Var,
        b: Var,
        f: impl Fn(Float, Float) -> Float,
    ) -> Result<(Tensor, bool), TensorError> {
        let (ta, ga) = self.node(a)?;
        let (tb, gb) = self.node(b)?;
        let cols = ta.shape()[1];
        let row = tb.data();
        let out = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, row[i % cols]))
            .collect();
        Ok((Tensor::new(ta.shape().to_vec(), out)?, ga || gb))
    }

    /// Elementwise sum. `b` may also be a row vector broadcast over the rows
    /// of a rank-2 `a`.
    pub fn add(&mut self, a: Var, b: Var) -> OpResult {
        if self.row_broadcast(a, b)? {
            let (value, g) = self.zip_row(a, b, |x, y| x + y)?;
            return Ok(self.push(value, Op::AddRow(a.id, b.id), g));
        }
        let (value, g) = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a.id, b.id), g))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> OpResult {
        let (value, g) = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a.id, b.id), g))
    }

    /// Elementwise product, with the same row broadcasting as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> OpResult {
        if self.row_broadcast(a, b)? {
            let (value, g) = self.zip_row(a, b, |x, y| x * y)?;
            return Ok(self.push(value, Op::MulRow(a.id, b.id), g));
        }
        let (value, g) = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a.id, b.id), g))
    }

    pub fn scale(&mut self, a: Var, s: Float) -> OpResult {
        let (ta, ga) = self.node(a)?;
        let out = ta.data().iter().map(|&x| x * s).collect();
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Scale(a.id, s), ga))
    }

    pub fn sum(&mut self, a: Var) -> OpResult {
        let (ta, ga) = self.node(a)?;
        let total = ta.data().iter().sum();
        Ok(self.push(Tensor::scalar(total), Op::Sum(a.id), ga))
    }

    /// Concatenation of rank-1 tensors (axis 0) or rank-2 tensors along rows
    /// (axis 0) or columns (axis 1).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> OpResult {
        let first = *parts
            .first()
            .ok_or_else(|| TensorError::Invalid("concat: no inputs".into()))?;
        let t0 = self.node(first)?.0.clone();
        if axis >= t0.rank() || t0.rank() > 2 {
            return Err(TensorError::Axis {
                op: "concat",
                axis,
                shape: t0.shape().to_vec(),
            });
        }
        let mut needs = false;
        let mut tensors = Vec::with_capacity(parts.len());
        for &p in parts {
            let (t, g) = self.node(p)?;
            let compatible = t.rank() == t0.rank()
                && t.shape()
                    .iter()
                    .zip(t0.shape())
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(shape_err("concat", &t0, t));
            }
            needs |= g;
            tensors.push(t);
        }
        let total: usize = tensors.iter().map(|t| t.shape()[axis]).sum();
        let mut shape = t0.shape().to_vec();
        shape[axis] = total;
        let data = if axis == 0 {
            tensors.iter().flat_map(|t| t.data().iter().copied()).collect()
        } else {
            let rows = shape[0];
            let mut out = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for t in &tensors {
                    out.extend_from_slice(t.row_slice(r));
                }
            }
            out
        };
        let value = Tensor::new(shape, data)?;
        let inputs = parts.iter().map(|p| p.id).collect();
        Ok(self.push(value, Op::Concat { inputs, axis }, needs))
    }

    /// `len` consecutive rows (axis 0) or columns (axis 1) starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> OpResult {
        let (ta, ga) = self.node(a)?;
        if axis >= ta.rank() || ta.rank() > 2 {
            return Err(TensorError::Axis {
                op: "slice",
                axis,
                shape: ta.shape().to_vec(),
            });
        }
        if len == 0 || start + len > ta.shape()[axis] {
            return Err(TensorError::Invalid(format!(
                "slice: range {start}..{} out of bounds for shape {:?}",
                start + len,
                ta.shape()
            )));
        }
        let mut shape = ta.shape().to_vec();
        shape[axis] = len;
        let data = if axis == 0 {
            let inner: usize = ta.shape()[1..].iter().product();
            ta.data()[start * inner..(start + len) * inner].to_vec()
        } else {
            let rows = ta.shape()[0];
            let mut out = Vec::with_capacity(rows * len);
            for r in 0..rows {
                out.extend_from_slice(&ta.row_slice(r)[start..start + len]);
            }
            out
        };
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Slice { input: a.id, axis, start }, ga))
    }

    pub fn transpose(&mut self, a: Var) -> OpResult {
        let (ta, ga) = self.node(a)?;
        if ta.rank() != 2 {
            return Err(TensorError::Axis {
                op: "transpose",
                axis: 1,
                shape: ta.shape().to_vec(),
            });
        }
        let (r, c) = (ta.shape()[0], ta.shape()[1]);
        let src = ta.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let value = Tensor::new(vec![c, r], out)?;
        Ok(self.push(value, Op::Transpose(a.id), ga))
    }

    /// `out.flat[f] = a.flat[index[f]]`, reshaped to `shape`. The backward
    /// rule scatter-adds into `a`.
    pub fn gather(&mut self, a: Var, index: Vec<usize>, shape: Vec<usize>) -> OpResult {
        let (ta, ga) = self.node(a)?;
        if let Some(&bad) = index.iter().find(|&&i| i >= ta.len()) {
            return Err(TensorError::Invalid(format!(
                "gather: index {bad} out of bounds for {} elements",
                ta.len()
            )));
        }
        let src = ta.data();
        let out = index.iter().map(|&i| src[i]).collect();
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Gather { input: a.id, index }, ga))
    }

    /// Rows of `table` (`[V, d]`) selected by `ids`, giving `[ids.len(), d]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> OpResult {
        let (tt, gt) = self.node(table)?;
        if tt.rank() != 2 {
            return Err(TensorError::Invalid(format!(
                "embedding: table must be rank 2, got {:?}",
                tt.shape()
            )));
        }
        let (v, d) = (tt.shape()[0], tt.shape()[1]);
        if ids.is_empty() {
            return Err(TensorError::Invalid("embedding: empty id list".into()));
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(TensorError::Invalid(format!(
                    "embedding: id {id} out of range for {v} rows"
                )));
            }
            out.extend_from_slice(tt.row_slice(id));
        }
        let value = Tensor::new(vec![ids.len(), d], out)?;
        let op = Op::Embedding {
            table: table.id,
            ids: ids.to_vec(),
        };
        Ok(self.push(value, op, gt))
    }

    fn unary(&mut self, a: Var, f: impl Fn(Float) -> Float, op: fn(usize) -> Op) -> OpResult {
        let (ta, ga) = self.node(a)?;
        let out = ta.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        Ok(self.push(value, op(a.id), ga))
    }

    pub fn sigmoid(&mut self, a: Var) -> OpResult {
        self.unary(a, sigmoid, Op::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> OpResult {
        self.unary(a, Float::tanh, Op::Tanh)
    }

    pub fn relu(&mut self, a: Var) -> OpResult {
        self.unary(a, |x| x.max(0.0), Op::Relu)
    }

    /// Max-shifted softmax along `axis`.
    pub fn softmax(&mut self, a: Var, axis: usize) -> OpResult {
        let (ta, ga) = self.node(a)?;
        if axis >= ta.rank() {
            return Err(TensorError::Axis {
                op: "softmax",
                axis,
                shape: ta.shape().to_vec(),
            });
        }
        let (outer, n, inner) = axis_strides(ta.shape(), axis);
        let out = softmax_rows(ta.data(), outer, n, inner);
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Softmax { input: a.id, axis }, ga))
    }

    /// Per row of the last axis: `(x - mean) / (popstd + eps)`.
    pub fn standardize(&mut self, a: Var, eps: Float) -> OpResult {
        let (ta, ga) = self.node(a)?;
        let cols = *ta.shape().last().unwrap();
        let rows = ta.len() / cols;
        let mut out = Vec::with_capacity(ta.len());
        let mut sigma = Vec::with_capacity(rows);
        let mut denom = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &ta.data()[r * cols..(r + 1) * cols];
            let mean = shifted_mean(row);
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<Float>() / cols as Float;
            let s = var.sqrt();
            let d = s + eps;
            out.extend(row.iter().map(|&x| (x - mean) / d));
            sigma.push(s);
            denom.push(d);
        }
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        let op = Op::Standardize {
            input: a.id,
            sigma,
            denom,
        };
        Ok(self.push(value, op, ga))
    }

    /// Inverted dropout. Identity (no new node) when `p == 0` or when not
    /// training.
    pub fn dropout(&mut self, a: Var, p: Float, rng: &mut Rng, training: bool) -> OpResult {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Invalid(format!(
                "dropout: rate {p} outside [0, 1)"
            )));
        }
        let (ta, ga) = self.node(a)?;
        if !training || p == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<Float> = (0..ta.len())
            .map(|_| if rng.uniform() < p as f64 { 0.0 } else { keep })
            .collect();
        let out = ta.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        Ok(self.push(value, Op::Dropout { input: a.id, mask }, ga))
    }

    /// Mean negative log-likelihood of `targets` under the row softmax of
    /// `logits` (`[B, V]`). Rows whose target equals `ignore` are skipped; if
    /// every row is skipped the loss is 0 with zero gradient.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], ignore: Option<usize>) -> OpResult {
        let (tl, gl) = self.node(logits)?;
        let (b, v) = tl.dims2();
        if targets.len() != b {
            return Err(TensorError::Invalid(format!(
                "cross_entropy: {} targets for {b} rows",
                targets.len()
            )));
        }
        let mut kept = Vec::with_capacity(b);
        for (position, &t) in targets.iter().enumerate() {
            if Some(t) == ignore {
                kept.push(None);
            } else if t >= v {
                return Err(TensorError::TargetOutOfRange {
                    position,
                    target: t,
                    classes: v,
                });
            } else {
                kept.push(Some(t));
            }
        }
        let count = kept.iter().flatten().count();
        let mut total = 0.0;
        for (r, t) in kept.iter().enumerate() {
            if let Some(t) = *t {
                let row = tl.row_slice(r);
                let max = row.iter().copied().fold(Float::NEG_INFINITY, Float::max);
                let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<Float>().ln();
                total += lse - row[t];
            }
        }
        let loss = if count == 0 { 0.0 } else { total / count as Float };
        let op = Op::CrossEntropy {
            logits: logits.id,
            targets: kept,
            count,
        };
        Ok(self.push(Tensor::scalar(loss), op, gl))
    }

    /// Gradients of the scalar `loss` with respect to every leaf created with
    /// `requires_grad`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TensorError> {
        let node = self.check(loss)?;
        if node.value.len() != 1 {
            return Err(TensorError::NotScalar(node.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<Float>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);
        let mut out: Vec<Option<Tensor>> = vec![None; loss.id + 1];

        for id in (0..=loss.id).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            if let Op::Leaf = node.op {
                out[id] = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                continue;
            }
            self.backward_node(node, &g, &mut grads);
        }
        Ok(Gradients {
            tape: self.id,
            grads: out,
        })
    }

    fn backward_node(&self, node: &Node, g: &[Float], grads: &mut [Option<Vec<Float>>]) {
        let nodes = &self.nodes;
        // Runs `f` on the gradient buffer of input `i` if that input needs one.
        let mut acc = |i: usize, f: &mut dyn FnMut(&mut [Float])| {
            if nodes[i].needs_grad {
                let buf = grads[i].get_or_insert_with(|| vec![0.0; nodes[i].value.len()]);
                f(buf);
            }
        };
        let val = |i: usize| nodes[i].value.data();
        let y = node.value.data();

        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = nodes[a].value.dims2();
                let n = nodes[b].value.shape()[1];
                let (av, bv) = (val(a), val(b));
                acc(a, &mut |da| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            da[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<Float>();
                        }
                    }
                });
                acc(b, &mut |db| {
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let s = av[i * k + p];
                            if s == 0.0 {
                                continue;
                            }
                            for (d, &gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *d += s * gv;
                            }
                        }
                    }
                });
            }
            &Op::Add(a, b) => {
                acc(a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                acc(b, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
            }
            &Op::AddRow(a, b) => {
                let cols = nodes[b].value.len();
                acc(a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                acc(b, &mut |d| {
                    for (i, gv) in g.iter().enumerate() {
                        d[i % cols] += gv;
                    }
                });
            }
            &Op::Sub(a, b) => {
                acc(a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += g));
                acc(b, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
            }
            &Op::Mul(a, b) => {
                let (av, bv) = (val(a), val(b));
                acc(a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * bv[i];
                    }
                });
                acc(b, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * av[i];
                    }
                });
            }
            &Op::MulRow(a, b) => {
                let (av, bv) = (val(a), val(b));
                let cols = bv.len();
                acc(a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * bv[i % cols];
                    }
                });
                acc(b, &mut |d| {
                    for i in 0..g.len() {
                        d[i % cols] += g[i] * av[i];
                    }
                });
            }
            &Op::Scale(a, s) => {
                acc(a, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += s * g));
            }
            &Op::Sum(a) => {
                acc(a, &mut |d| d.iter_mut().for_each(|d| *d += g[0]));
            }
            Op::Concat { inputs, axis } => {
                let mut offset = 0;
                let total_cols = *node.value.shape().last().unwrap();
                for &i in inputs {
                    let part = &nodes[i].value;
                    if *axis == 0 {
                        let len = part.len();
                        acc(i, &mut |d| {
                            d.iter_mut()
                                .zip(&g[offset..offset + len])
                                .for_each(|(d, g)| *d += g)
                        });
                        offset += len;
                    } else {
                        let (rows, cols) = part.dims2();
                        acc(i, &mut |d| {
                            for r in 0..rows {
                                let src = &g[r * total_cols + offset..r * total_cols + offset + cols];
                                for (dv, gv) in d[r * cols..(r + 1) * cols].iter_mut().zip(src) {
                                    *dv += gv;
                                }
                            }
                        });
                        offset += cols;
                    }
                }
            }
            &Op::Slice { input, axis, start } => {
                let src_shape = nodes[input].value.shape();
                if axis == 0 {
                    let inner: usize = src_shape[1..].iter().product();
                    acc(input, &mut |d| {
                        d[start * inner..start * inner + g.len()]
                            .iter_mut()
                            .zip(g)
                            .for_each(|(d, g)| *d += g)
                    });
                } else {
                    let cols = src_shape[1];
                    let len = node.value.shape()[1];
                    acc(input, &mut |d| {
                        for (r, grow) in g.chunks(len).enumerate() {
                            for (dv, gv) in d[r * cols + start..r * cols + start + len].iter_mut().zip(grow) {
                                *dv += gv;
                            }
                        }
                    });
                }
            }
            &Op::Transpose(a) => {
                let (r, c) = nodes[a].value.dims2();
                acc(a, &mut |d| {
                    for i in 0..r {
                        for j in 0..c {
                            d[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Gather { input, index } => {
                acc(*input, &mut |d| {
                    for (f, &i) in index.iter().enumerate() {
                        d[i] += g[f];
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let dim = nodes[*table].value.shape()[1];
                acc(*table, &mut |d| {
                    for (r, &id) in ids.iter().enumerate() {
                        for (dv, gv) in d[id * dim..(id + 1) * dim].iter_mut().zip(&g[r * dim..(r + 1) * dim]) {
                            *dv += gv;
                        }
                    }
                });
            }
            &Op::Sigmoid(a) => {
                acc(a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
            &Op::Tanh(a) => {
                acc(a, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                });
            }
            &Op::Relu(a) => {
                let x = val(a);
                acc(a, &mut |d| {
                    for i in 0..d.len() {
                        if x[i] > 0.0 {
                            d[i] += g[i];
                        }
                    }
                });
            }
            &Op::Softmax { input, axis } => {
                let (outer, n, inner) = axis_strides(node.value.shape(), axis);
                acc(input, &mut |d| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |j: usize| o * n * inner + j * inner + i;
                            let dot: Float = (0..n).map(|j| g[idx(j)] * y[idx(j)]).sum();
                            for j in 0..n {
                                d[idx(j)] += y[idx(j)] * (g[idx(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::Standardize { input, sigma, denom } => {
                let cols = *node.value.shape().last().unwrap();
                let n = cols as Float;
                acc(*input, &mut |d| {
                    for (r, (&s, &dn)) in sigma.iter().zip(denom).enumerate() {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        // centered input is y * denom
                        let g_denom: Float = -gr.iter().zip(yr).map(|(g, y)| g * y).sum::<Float>() / dn;
                        let mut dc: Vec<Float> = gr.iter().map(|g| g / dn).collect();
                        if s > 0.0 {
                            for (dcj, &yj) in dc.iter_mut().zip(yr) {
                                *dcj += g_denom * yj * dn / (n * s);
                            }
                        }
                        let mean_dc = dc.iter().sum::<Float>() / n;
                        for (dv, dcj) in d[r * cols..(r + 1) * cols].iter_mut().zip(&dc) {
                            *dv += dcj - mean_dc;
                        }
                    }
                });
            }
            Op::Dropout { input, mask } => {
                acc(*input, &mut |d| {
                    for i in 0..d.len() {
                        d[i] += g[i] * mask[i];
                    }
                });
            }
            Op::CrossEntropy { logits, targets, count } => {
                if *count == 0 {
                    return;
                }
                let lv = &nodes[*logits].value;
                let v = lv.dims2().1;
                let scale = g[0] / *count as Float;
                acc(*logits, &mut |d| {
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        let probs = softmax_rows(lv.row_slice(r), 1, v, 1);
                        for (j, p) in probs.iter().enumerate() {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            d[r * v + j] += scale * (p - onehot);
                        }
                    }
                });
            }
        }
    }
}
