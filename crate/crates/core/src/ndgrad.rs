//! Append-only computation graph with reverse-mode gradients.
//!
//! Nodes are evaluated eagerly when they are appended, so a graph doubles as
//! the forward pass. [`Graph::backward`] walks the nodes in reverse insertion
//! order and returns the gradient of a scalar loss with respect to every
//! [`Op::Leaf`]. Constants and [`Op::Detach`] outputs never receive gradients.
//!
//! Broadcasting is limited to scalar-vs-array for the elementwise binary
//! primitives, plus the row-vector bias add used by the classifier.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::array::Array;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive tag of a node.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    /// Differentiable input (parameter, magnitude bound or image under test).
    Leaf,
    /// Input that never receives a gradient.
    Constant,
    Add,
    Sub,
    Mul,
    AddScalar(f64),
    MulScalar(f64),
    Square,
    Abs,
    Ln,
    Log10,
    MaxScalar(f64),
    MinScalar(f64),
    Relu,
    /// Subgradient 1 strictly inside `(lo, hi)`, 0 at and beyond the bounds.
    Clamp {
        lo: f64,
        hi: f64,
    },
    Sum,
    Mean,
    /// `[n, k] x [k, m] -> [n, m]`.
    MatMul,
    /// `[n, m] + [m]`, the bias broadcast over rows.
    AddRow,
    /// Row-wise log-softmax over the last axis.
    LogSoftmax,
    /// Mean over rows of `-log softmax(logits)[label]`.
    SoftmaxCrossEntropy {
        labels: Vec<usize>,
    },
    /// Stacks equally shaped inputs along a new leading axis.
    Stack,
    Reshape(Vec<usize>),
    /// Identity on values, stops gradients.
    Detach,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::AddScalar(_) => "add_scalar",
            Op::MulScalar(_) => "mul_scalar",
            Op::Square => "square",
            Op::Abs => "abs",
            Op::Ln => "ln",
            Op::Log10 => "log10",
            Op::MaxScalar(_) => "max_scalar",
            Op::MinScalar(_) => "min_scalar",
            Op::Relu => "relu",
            Op::Clamp { .. } => "clamp",
            Op::Sum => "sum",
            Op::Mean => "mean",
            Op::MatMul => "matmul",
            Op::AddRow => "add_row",
            Op::LogSoftmax => "log_softmax",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::Stack => "stack",
            Op::Reshape(_) => "reshape",
            Op::Detach => "detach",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Op::Leaf | Op::Constant => Some(0),
            Op::Add | Op::Sub | Op::Mul | Op::MatMul | Op::AddRow => Some(2),
            Op::Stack => None,
            _ => Some(1),
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Array,
    requires_grad: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaves: Vec<NodeId>,
}

/// Gradients of one backward pass, keyed by leaf.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: BTreeMap<NodeId, Array>,
}

impl Gradients {
    pub fn get(&self, leaf: NodeId) -> Option<&Array> {
        self.grads.get(&leaf)
    }

    /// Gradient of a leaf that must exist.
    pub fn of(&self, leaf: NodeId) -> &Array {
        self.grads.get(&leaf).expect("node is not a leaf of this graph")
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Array)> {
        self.grads.iter().map(|(&k, v)| (k, v))
    }
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

    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    pub fn value(&self, id: NodeId) -> &Array {
        &self.nodes[id.0].value
    }

    /// Value of a single-element node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.item()
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id.0].op
    }

    pub fn inputs(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].inputs
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn leaf(&mut self, value: Array) -> NodeId {
        let id = self.push(Op::Leaf, Vec::new(), value, true);
        self.leaves.push(id);
        id
    }

    pub fn constant(&mut self, value: Array) -> NodeId {
        self.push(Op::Constant, Vec::new(), value, false)
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Array, requires_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, inputs, value, requires_grad });
        id
    }

    /// Evaluates `op` on `inputs` and appends the result.
    pub fn apply(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        match op.arity() {
            Some(0) => {
                return Err(Error::Config(alloc::format!("{} nodes are created with leaf()/constant()", op.name())))
            }
            Some(n) if n != inputs.len() => {
                return Err(Error::Config(alloc::format!("{} takes {} inputs, got {}", op.name(), n, inputs.len())))
            }
            None if inputs.is_empty() => return Err(Error::Config(alloc::format!("{} needs inputs", op.name()))),
            _ => {}
        }
        let value = self.forward(&op, inputs)?;
        let requires_grad = !matches!(op, Op::Detach) && inputs.iter().any(|&i| self.nodes[i.0].requires_grad);
        Ok(self.push(op, inputs.to_vec(), value, requires_grad))
    }

    fn forward(&self, op: &Op, inputs: &[NodeId]) -> Result<Array> {
        let x = &self.nodes[inputs[0].0].value;
        let out = match op {
            Op::Leaf | Op::Constant => unreachable!(),
            Op::Add | Op::Sub | Op::Mul => {
                let y = &self.nodes[inputs[1].0].value;
                let shape = broadcast_shape(op.name(), x, y)?;
                let (xs, ys) = (x.data(), y.data());
                let data = match op {
                    Op::Add => binary_map(xs, ys, |a, b| a + b),
                    Op::Sub => binary_map(xs, ys, |a, b| a - b),
                    _ => binary_map(xs, ys, |a, b| a * b),
                };
                Array::with_shape(shape, data)
            }
            Op::AddScalar(c) => x.map(|v| v + c),
            Op::MulScalar(c) => x.map(|v| v * c),
            Op::Square => x.map(|v| v * v),
            Op::Abs => x.map(libm::fabs),
            Op::Ln => x.map(libm::log),
            Op::Log10 => x.map(libm::log10),
            Op::MaxScalar(c) => x.map(|v| if v > *c { v } else { *c }),
            Op::MinScalar(c) => x.map(|v| if v < *c { v } else { *c }),
            Op::Relu => x.map(|v| if v > 0.0 { v } else { 0.0 }),
            Op::Clamp { lo, hi } => x.map(|v| v.max(*lo).min(*hi)),
            Op::Sum => Array::scalar(x.data().iter().sum()),
            Op::Mean => Array::scalar(x.data().iter().sum::<f64>() / x.len() as f64),
            Op::MatMul => {
                let y = &self.nodes[inputs[1].0].value;
                let (n, k, m) = matmul_dims(x, y)?;
                let mut out = vec![0.0; n * m];
                matmul(x.data(), y.data(), &mut out, n, k, m);
                Array::with_shape(vec![n, m], out)
            }
            Op::AddRow => {
                let y = &self.nodes[inputs[1].0].value;
                let m = y.len();
                if x.shape().len() != 2 || x.shape()[1] != m {
                    return Err(mismatch(op.name(), x, y));
                }
                let mut data = x.data().to_vec();
                for row in data.chunks_exact_mut(m) {
                    for (v, b) in row.iter_mut().zip(y.data()) {
                        *v += b;
                    }
                }
                Array::with_shape(x.shape().to_vec(), data)
            }
            Op::LogSoftmax => {
                let k = *x.shape().last().unwrap();
                let mut data = x.data().to_vec();
                for row in data.chunks_exact_mut(k) {
                    let lse = log_sum_exp(row);
                    row.iter_mut().for_each(|v| *v -= lse);
                }
                Array::with_shape(x.shape().to_vec(), data)
            }
            Op::SoftmaxCrossEntropy { labels } => {
                let k = *x.shape().last().unwrap();
                let rows = x.len() / k;
                if labels.len() != rows {
                    return Err(Error::ShapeMismatch {
                        primitive: op.name(),
                        lhs: x.shape().to_vec(),
                        rhs: vec![labels.len()],
                    });
                }
                if let Some(&label) = labels.iter().find(|&&l| l >= k) {
                    return Err(Error::LabelOutOfRange { label, classes: k });
                }
                let total: f64 =
                    x.data().chunks_exact(k).zip(labels).map(|(row, &label)| log_sum_exp(row) - row[label]).sum();
                Array::scalar(total / rows as f64)
            }
            Op::Stack => {
                let shape = x.shape();
                let mut data = Vec::with_capacity(x.len() * inputs.len());
                for &id in inputs {
                    let v = &self.nodes[id.0].value;
                    if v.shape() != shape {
                        return Err(mismatch(op.name(), x, v));
                    }
                    data.extend_from_slice(v.data());
                }
                let mut out_shape = vec![inputs.len()];
                out_shape.extend_from_slice(shape);
                Array::with_shape(out_shape, data)
            }
            Op::Reshape(shape) => {
                if shape.is_empty() || shape.contains(&0) || shape.iter().product::<usize>() != x.len() {
                    return Err(Error::ShapeMismatch {
                        primitive: op.name(),
                        lhs: x.shape().to_vec(),
                        rhs: shape.clone(),
                    });
                }
                x.reshaped(shape.clone())
            }
            Op::Detach => x.clone(),
        };
        Ok(out)
    }

    /// Gradients of the scalar `loss` with respect to every leaf.
    ///
    /// Leaves the loss does not depend on get a zero gradient.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let loss_value = &self.nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut out = BTreeMap::new();
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                out.insert(NodeId(id), Array::with_shape(node.value.shape().to_vec(), g));
                continue;
            }
            self.propagate(node, g, &mut grads);
        }
        for &leaf in &self.leaves {
            out.entry(leaf).or_insert_with(|| Array::zeros(self.nodes[leaf.0].value.shape()));
        }
        Ok(Gradients { grads: out })
    }

    fn propagate(&self, node: &Node, g: Vec<f64>, grads: &mut [Option<Vec<f64>>]) {
        let inputs = &node.inputs;
        let wants = |i: usize| self.nodes[inputs[i].0].requires_grad;
        let x = &self.nodes[inputs[0].0].value;
        let xs = x.data();
        match &node.op {
            Op::Leaf | Op::Constant | Op::Detach => {}
            Op::Add | Op::Sub | Op::Mul => {
                let y = &self.nodes[inputs[1].0].value;
                let ys = y.data();
                if wants(1) {
                    let contrib: Vec<f64> = match node.op {
                        Op::Mul => binary_map(&g, xs, |gi, v| gi * v),
                        Op::Sub => g.iter().map(|gi| -gi).collect(),
                        _ => g.clone(),
                    };
                    accumulate(grads, inputs[1], reduce_to(contrib, y.len()));
                }
                if wants(0) {
                    let contrib = match node.op {
                        Op::Mul => binary_map(&g, ys, |gi, v| gi * v),
                        _ => g,
                    };
                    accumulate(grads, inputs[0], reduce_to(contrib, x.len()));
                }
            }
            Op::AddScalar(_) | Op::Reshape(_) => accumulate(grads, inputs[0], g),
            Op::MulScalar(c) => accumulate(grads, inputs[0], zip_map(g, xs, |gi, _| gi * c)),
            Op::Square => accumulate(grads, inputs[0], zip_map(g, xs, |gi, v| 2.0 * v * gi)),
            Op::Abs => accumulate(
                grads,
                inputs[0],
                zip_map(g, xs, |gi, v| {
                    if v > 0.0 {
                        gi
                    } else if v < 0.0 {
                        -gi
                    } else {
                        0.0
                    }
                }),
            ),
            Op::Ln => accumulate(grads, inputs[0], zip_map(g, xs, |gi, v| gi / v)),
            Op::Log10 => accumulate(grads, inputs[0], zip_map(g, xs, |gi, v| gi / (v * core::f64::consts::LN_10))),
            Op::MaxScalar(c) => accumulate(grads, inputs[0], zip_map(g, xs, |gi, v| if v > *c { gi } else { 0.0 })),
            Op::MinScalar(c) => accumulate(grads, inputs[0], zip_map(g, xs, |gi, v| if v < *c { gi } else { 0.0 })),
            Op::Relu => accumulate(grads, inputs[0], zip_map(g, xs, |gi, v| if v > 0.0 { gi } else { 0.0 })),
            Op::Clamp { lo, hi } => {
                accumulate(grads, inputs[0], zip_map(g, xs, |gi, v| if v > *lo && v < *hi { gi } else { 0.0 }))
            }
            Op::Sum => accumulate(grads, inputs[0], vec![g[0]; x.len()]),
            Op::Mean => accumulate(grads, inputs[0], vec![g[0] / x.len() as f64; x.len()]),
            Op::MatMul => {
                let y = &self.nodes[inputs[1].0].value;
                let (n, k, m) = (x.shape()[0], x.shape()[1], y.shape()[1]);
                if wants(0) {
                    let mut gx = vec![0.0; n * k];
                    matmul_transpose_rhs(&g, y.data(), &mut gx, n, m, k);
                    accumulate(grads, inputs[0], gx);
                }
                if wants(1) {
                    let mut gy = vec![0.0; k * m];
                    matmul_transpose_lhs(xs, &g, &mut gy, n, k, m);
                    accumulate(grads, inputs[1], gy);
                }
            }
            Op::AddRow => {
                if wants(1) {
                    let m = self.nodes[inputs[1].0].value.len();
                    let mut gb = vec![0.0; m];
                    for row in g.chunks_exact(m) {
                        gb.iter_mut().zip(row).for_each(|(acc, v)| *acc += v);
                    }
                    accumulate(grads, inputs[1], gb);
                }
                if wants(0) {
                    accumulate(grads, inputs[0], g);
                }
            }
            Op::LogSoftmax => {
                let k = *x.shape().last().unwrap();
                let out = node.value.data();
                let mut gx = vec![0.0; x.len()];
                for ((gx_row, g_row), out_row) in gx.chunks_exact_mut(k).zip(g.chunks_exact(k)).zip(out.chunks_exact(k))
                {
                    let total: f64 = g_row.iter().sum();
                    for j in 0..k {
                        gx_row[j] = g_row[j] - libm::exp(out_row[j]) * total;
                    }
                }
                accumulate(grads, inputs[0], gx);
            }
            Op::SoftmaxCrossEntropy { labels } => {
                let k = *x.shape().last().unwrap();
                let rows = x.len() / k;
                let scale = g[0] / rows as f64;
                let mut gx = vec![0.0; x.len()];
                for ((gx_row, row), &label) in gx.chunks_exact_mut(k).zip(xs.chunks_exact(k)).zip(labels) {
                    let lse = log_sum_exp(row);
                    for j in 0..k {
                        let p = libm::exp(row[j] - lse);
                        gx_row[j] = scale * (p - if j == label { 1.0 } else { 0.0 });
                    }
                }
                accumulate(grads, inputs[0], gx);
            }
            Op::Stack => {
                let chunk = x.len();
                for (i, &id) in inputs.iter().enumerate() {
                    if self.nodes[id.0].requires_grad {
                        accumulate(grads, id, g[i * chunk..(i + 1) * chunk].to_vec());
                    }
                }
            }
        }
    }

    // Convenience builders over `apply`.

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::MatMul, &[a, b])
    }

    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        self.apply(Op::AddRow, &[a, bias])
    }

    pub fn stack(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.apply(Op::Stack, parts)
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.apply(Op::Reshape(shape.to_vec()), &[a])
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        self.apply(Op::SoftmaxCrossEntropy { labels: labels.to_vec() }, &[logits])
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(Op::AddScalar(c), a)
    }

    pub fn mul_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(Op::MulScalar(c), a)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Square, a)
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Abs, a)
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Ln, a)
    }

    pub fn log10(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Log10, a)
    }

    pub fn max_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(Op::MaxScalar(c), a)
    }

    pub fn min_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(Op::MinScalar(c), a)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Relu, a)
    }

    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        self.unary(Op::Clamp { lo, hi }, a)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Sum, a)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Mean, a)
    }

    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::LogSoftmax, a)
    }

    pub fn detach(&mut self, a: NodeId) -> NodeId {
        self.unary(Op::Detach, a)
    }

    fn unary(&mut self, op: Op, a: NodeId) -> NodeId {
        self.apply(op, &[a]).expect("unary primitives accept any shape")
    }
}

#[inline]
/// Elementwise `f` where either side may be a broadcast scalar.
fn binary_map(xs: &[f64], ys: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    match (xs.len(), ys.len()) {
        (1, _) => ys.iter().map(|&b| f(xs[0], b)).collect(),
        (_, 1) => xs.iter().map(|&a| f(a, ys[0])).collect(),
        _ => xs.iter().zip(ys).map(|(&a, &b)| f(a, b)).collect(),
    }
}

fn mismatch(primitive: &'static str, a: &Array, b: &Array) -> Error {
    Error::ShapeMismatch { primitive, lhs: a.shape().to_vec(), rhs: b.shape().to_vec() }
}

fn broadcast_shape(primitive: &'static str, a: &Array, b: &Array) -> Result<Vec<usize>> {
    if a.shape() == b.shape() || b.is_scalar() {
        Ok(a.shape().to_vec())
    } else if a.is_scalar() {
        Ok(b.shape().to_vec())
    } else {
        Err(mismatch(primitive, a, b))
    }
}

fn reduce_to(contrib: Vec<f64>, len: usize) -> Vec<f64> {
    if contrib.len() == len {
        contrib
    } else {
        vec![contrib.iter().sum()]
    }
}

/// Rewrites `g` in place as `f(g_i, x_i)`.
fn zip_map(mut g: Vec<f64>, x: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    g.iter_mut().zip(x).for_each(|(gi, &v)| *gi = f(*gi, v));
    g
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, contrib: Vec<f64>) {
    match &mut grads[id.0] {
        Some(acc) => acc.iter_mut().zip(contrib).for_each(|(a, c)| *a += c),
        slot @ None => *slot = Some(contrib),
    }
}

fn matmul_dims(a: &Array, b: &Array) -> Result<(usize, usize, usize)> {
    match (a.shape(), b.shape()) {
        (&[n, k], &[k2, m]) if k == k2 => Ok((n, k, m)),
        _ => Err(mismatch("matmul", a, b)),
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + libm::log(row.iter().map(|&v| libm::exp(v - max)).sum::<f64>())
}

/// `out[n, m] += a[n, k] * b[k, m]`.
pub(crate) fn matmul(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let out_row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let s = a[i * k + p];
            let b_row = &b[p * m..(p + 1) * m];
            for (o, &w) in out_row.iter_mut().zip(b_row) {
                *o += s * w;
            }
        }
    }
}

/// `out[n, k] += g[n, m] * b[k, m]^T`.
fn matmul_transpose_rhs(g: &[f64], b: &[f64], out: &mut [f64], n: usize, m: usize, k: usize) {
    for i in 0..n {
        let g_row = &g[i * m..(i + 1) * m];
        for p in 0..k {
            let b_row = &b[p * m..(p + 1) * m];
            out[i * k + p] += g_row.iter().zip(b_row).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `out[k, m] += a[n, k]^T * g[n, m]`.
fn matmul_transpose_lhs(a: &[f64], g: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let g_row = &g[i * m..(i + 1) * m];
        for p in 0..k {
            let s = a[i * k + p];
            let out_row = &mut out[p * m..(p + 1) * m];
            for (o, &v) in out_row.iter_mut().zip(g_row) {
                *o += s * v;
            }
        }
    }
}
