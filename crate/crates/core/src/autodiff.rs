//! Dense row-major tensors and a reverse-mode differentiation tape.
//!
//! Operations are evaluated eagerly as they are recorded, so model code reads
//! like ordinary numeric code. The recorded graph can later be re-evaluated
//! with different leaf bindings ([`Graph::forward`]) and differentiated with
//! respect to every trainable leaf ([`Graph::backward`]).
//!
//! Gradients flowing into a node from several consumers are summed.

use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("node {node}: shape mismatch in {op}: {detail}")]
    ShapeMismatch {
        node: usize,
        op: &'static str,
        detail: String,
    },
    #[error("node {node}: non-finite value produced by {op}")]
    NonFinite { node: usize, op: &'static str },
    #[error("backward seed node {node} is not scalar (shape {shape:?})")]
    NotScalar { node: usize, shape: Vec<usize> },
    #[error("no leaf named `{0}`")]
    UnknownLeaf(String),
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("objective is non-finite at coordinate {0}")]
    NonFiniteObjective(usize),
    #[error("finite-difference step must be positive, got {0}")]
    BadStep(f64),
}

pub type Result<T> = std::result::Result<T, AutodiffError>;

/// A dense tensor. Rank 0 (scalar), 1 (vector) and 2 (matrix) are used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(AutodiffError::InvalidTensor(format!("zero extent in shape {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(AutodiffError::InvalidTensor(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Panics on an empty vector.
    pub fn vector(data: Vec<f64>) -> Self {
        assert!(!data.is_empty(), "empty vector");
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
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

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        self.shape.get(1).copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Index of a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf {
        name: Option<String>,
        trainable: bool,
    },
    /// `[r,k] x [k]` or `[r,k] x [k,c]`.
    MatMul(NodeId, NodeId),
    /// `[r,k] x [c,k]^T -> [r,c]`.
    MatMulNT(NodeId, NodeId),
    /// `[n]^T x [n,c] -> [c]`.
    VecMat(NodeId, NodeId),
    Outer(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Affine(NodeId, f64, f64),
    ScaleBy(NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Softmax(NodeId),
    Concat(Vec<NodeId>),
    Slice(NodeId, usize, usize),
    Row(NodeId, usize),
    Stack(Vec<NodeId>),
    Sum(NodeId),
    Dot(NodeId, NodeId),
    Mask(NodeId, Rc<[f64]>),
    CrossEntropy(NodeId, usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulNT(..) => "matmul_nt",
            Op::VecMat(..) => "vecmat",
            Op::Outer(..) => "outer",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Affine(..) => "affine",
            Op::ScaleBy(..) => "scale_by",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softmax(..) => "softmax",
            Op::Concat(..) => "concat",
            Op::Slice(..) => "slice",
            Op::Row(..) => "row",
            Op::Stack(..) => "stack",
            Op::Sum(..) => "sum",
            Op::Dot(..) => "dot",
            Op::Mask(..) => "mask",
            Op::CrossEntropy(..) => "cross_entropy",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf { .. } => Vec::new(),
            Op::MatMul(a, b)
            | Op::MatMulNT(a, b)
            | Op::VecMat(a, b)
            | Op::Outer(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::ScaleBy(a, b)
            | Op::Dot(a, b) => vec![*a, *b],
            Op::Affine(a, ..)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Softmax(a)
            | Op::Slice(a, ..)
            | Op::Row(a, _)
            | Op::Sum(a)
            | Op::Mask(a, _)
            | Op::CrossEntropy(a, _) => vec![*a],
            Op::Concat(xs) | Op::Stack(xs) => xs.clone(),
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Reverse-mode tape. Nodes are stored in creation order, which is a
/// topological order: every input precedes its consumer.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaves: HashMap<String, NodeId>,
    outputs: BTreeMap<String, NodeId>,
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Numerically stable softmax of a slice.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

/// Numerically stable log-softmax of a slice.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

fn mismatch(node: usize, op: &Op, detail: String) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        node,
        op: op.name(),
        detail,
    }
}

fn eval(op: &Op, nodes: &[Node], id: usize) -> Result<Tensor> {
    let v = |n: &NodeId| &nodes[n.0].value;
    let out = match op {
        Op::Leaf { .. } => unreachable!("leaves are not evaluated"),
        Op::MatMul(a, b) => {
            let (a, b) = (v(a), v(b));
            if a.rank() != 2 || b.rank() == 0 || b.rows() != a.cols() {
                return Err(mismatch(id, op, format!("{:?} x {:?}", a.shape(), b.shape())));
            }
            let (r, k) = (a.rows(), a.cols());
            if b.rank() == 1 {
                let data = (0..r).map(|i| dot(a.row(i), b.data())).collect();
                Tensor { shape: vec![r], data }
            } else {
                let c = b.cols();
                let mut data = vec![0.0; r * c];
                for i in 0..r {
                    let out_row = &mut data[i * c..(i + 1) * c];
                    for l in 0..k {
                        axpy(a.data[i * k + l], b.row(l), out_row);
                    }
                }
                Tensor {
                    shape: vec![r, c],
                    data,
                }
            }
        }
        Op::MatMulNT(a, b) => {
            let (a, b) = (v(a), v(b));
            if a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols() {
                return Err(mismatch(id, op, format!("{:?} x {:?}^T", a.shape(), b.shape())));
            }
            let (r, c) = (a.rows(), b.rows());
            let mut data = Vec::with_capacity(r * c);
            for i in 0..r {
                for j in 0..c {
                    data.push(dot(a.row(i), b.row(j)));
                }
            }
            Tensor {
                shape: vec![r, c],
                data,
            }
        }
        Op::VecMat(w, m) => {
            let (w, m) = (v(w), v(m));
            if w.rank() != 1 || m.rank() != 2 || w.len() != m.rows() {
                return Err(mismatch(id, op, format!("{:?}^T x {:?}", w.shape(), m.shape())));
            }
            let c = m.cols();
            let mut data = vec![0.0; c];
            for (i, &wi) in w.data.iter().enumerate() {
                axpy(wi, m.row(i), &mut data);
            }
            Tensor { shape: vec![c], data }
        }
        Op::Outer(a, b) => {
            let (a, b) = (v(a), v(b));
            if a.rank() != 1 || b.rank() != 1 {
                return Err(mismatch(id, op, format!("{:?} outer {:?}", a.shape(), b.shape())));
            }
            let mut data = Vec::with_capacity(a.len() * b.len());
            for &x in &a.data {
                data.extend(b.data.iter().map(|y| x * y));
            }
            Tensor {
                shape: vec![a.len(), b.len()],
                data,
            }
        }
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
            let (x, y) = (v(a), v(b));
            if x.shape != y.shape {
                return Err(mismatch(id, op, format!("{:?} vs {:?}", x.shape(), y.shape())));
            }
            let data = match op {
                Op::Add(..) => x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect(),
                Op::Sub(..) => x.data.iter().zip(&y.data).map(|(p, q)| p - q).collect(),
                _ => x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect(),
            };
            Tensor {
                shape: x.shape.clone(),
                data,
            }
        }
        Op::AddRow(m, r) => {
            let (m, r) = (v(m), v(r));
            if m.rank() != 2 || r.rank() != 1 || r.len() != m.cols() {
                return Err(mismatch(id, op, format!("{:?} + row {:?}", m.shape(), r.shape())));
            }
            let c = m.cols();
            let data = m.data.iter().enumerate().map(|(k, x)| x + r.data[k % c]).collect();
            Tensor {
                shape: m.shape.clone(),
                data,
            }
        }
        Op::Affine(a, scale, shift) => {
            let a = v(a);
            Tensor {
                shape: a.shape.clone(),
                data: a.data.iter().map(|x| scale * x + shift).collect(),
            }
        }
        Op::ScaleBy(s, a) => {
            let (s, a) = (v(s), v(a));
            if s.len() != 1 {
                return Err(mismatch(id, op, format!("scale factor has shape {:?}", s.shape())));
            }
            let k = s.data[0];
            Tensor {
                shape: a.shape.clone(),
                data: a.data.iter().map(|x| k * x).collect(),
            }
        }
        Op::Tanh(a) => {
            let a = v(a);
            Tensor {
                shape: a.shape.clone(),
                data: a.data.iter().map(|x| x.tanh()).collect(),
            }
        }
        Op::Sigmoid(a) => {
            let a = v(a);
            Tensor {
                shape: a.shape.clone(),
                data: a.data.iter().map(|&x| sigmoid(x)).collect(),
            }
        }
        Op::Softmax(a) => {
            let a = v(a);
            if a.rank() == 0 {
                return Err(mismatch(id, op, "softmax of a scalar".into()));
            }
            let mut out = a.clone();
            let width = if a.rank() == 1 { a.len() } else { a.cols() };
            for row in out.data.chunks_mut(width) {
                softmax_in_place(row);
            }
            out
        }
        Op::Concat(xs) => {
            let mut data = Vec::new();
            for x in xs {
                let t = v(x);
                if t.rank() != 1 {
                    return Err(mismatch(id, op, format!("concat part has shape {:?}", t.shape())));
                }
                data.extend_from_slice(&t.data);
            }
            if data.is_empty() {
                return Err(mismatch(id, op, "nothing to concatenate".into()));
            }
            Tensor {
                shape: vec![data.len()],
                data,
            }
        }
        Op::Slice(a, start, len) => {
            let a = v(a);
            if a.rank() != 1 || *len == 0 || start + len > a.len() {
                return Err(mismatch(
                    id,
                    op,
                    format!("[{start}..{}] of {:?}", start + len, a.shape()),
                ));
            }
            Tensor {
                shape: vec![*len],
                data: a.data[*start..start + len].to_vec(),
            }
        }
        Op::Row(m, i) => {
            let m = v(m);
            if m.rank() != 2 || *i >= m.rows() {
                return Err(mismatch(id, op, format!("row {i} of {:?}", m.shape())));
            }
            Tensor {
                shape: vec![m.cols()],
                data: m.row(*i).to_vec(),
            }
        }
        Op::Stack(xs) => {
            let Some(first) = xs.first() else {
                return Err(mismatch(id, op, "nothing to stack".into()));
            };
            let c = v(first).len();
            let mut data = Vec::with_capacity(c * xs.len());
            for x in xs {
                let t = v(x);
                if t.rank() != 1 || t.len() != c {
                    return Err(mismatch(
                        id,
                        op,
                        format!("row of shape {:?}, expected [{c}]", t.shape()),
                    ));
                }
                data.extend_from_slice(&t.data);
            }
            Tensor {
                shape: vec![xs.len(), c],
                data,
            }
        }
        Op::Sum(a) => Tensor::scalar(v(a).data.iter().sum()),
        Op::Dot(a, b) => {
            let (a, b) = (v(a), v(b));
            if a.rank() != 1 || a.shape != b.shape {
                return Err(mismatch(id, op, format!("{:?} . {:?}", a.shape(), b.shape())));
            }
            Tensor::scalar(dot(&a.data, &b.data))
        }
        Op::Mask(a, mask) => {
            let a = v(a);
            if a.len() != mask.len() {
                return Err(mismatch(id, op, format!("mask of {} for {:?}", mask.len(), a.shape())));
            }
            Tensor {
                shape: a.shape.clone(),
                data: a.data.iter().zip(mask.iter()).map(|(x, m)| x * m).collect(),
            }
        }
        Op::CrossEntropy(a, target) => {
            let a = v(a);
            if a.rank() != 1 || *target >= a.len() {
                return Err(mismatch(id, op, format!("target {target} for logits {:?}", a.shape())));
            }
            let lp = log_softmax(&a.data);
            Tensor::scalar(-lp[*target])
        }
    };
    if !out.is_finite() {
        return Err(AutodiffError::NonFinite {
            node: id,
            op: op.name(),
        });
    }
    Ok(out)
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

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn leaf_id(&self, name: &str) -> Option<NodeId> {
        self.leaves.get(name).copied()
    }

    fn push_leaf(&mut self, name: Option<String>, value: Tensor, trainable: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        if let Some(n) = &name {
            self.leaves.insert(n.clone(), id);
        }
        self.nodes.push(Node {
            op: Op::Leaf { name, trainable },
            value,
            requires_grad: trainable,
        });
        id
    }

    /// Trainable named leaf; [`Graph::backward`] reports its gradient.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> NodeId {
        self.push_leaf(Some(name.into()), value, true)
    }

    /// Named leaf that can be rebound by [`Graph::forward`] but is not trained.
    pub fn input(&mut self, name: impl Into<String>, value: Tensor) -> NodeId {
        self.push_leaf(Some(name.into()), value, false)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(None, value, false)
    }

    /// Registers `id` under `name` in the map returned by [`Graph::forward`].
    pub fn set_output(&mut self, name: impl Into<String>, id: NodeId) {
        self.outputs.insert(name.into(), id);
    }

    fn record(&mut self, op: Op) -> Result<NodeId> {
        let id = self.nodes.len();
        let value = eval(&op, &self.nodes, id)?;
        let requires_grad = op.inputs().iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(NodeId(id))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::MatMulNT(a, b))
    }

    /// `wᵀ · m`: weighted sum of the rows of `m`.
    pub fn vecmat(&mut self, w: NodeId, m: NodeId) -> Result<NodeId> {
        self.record(Op::VecMat(w, m))
    }

    pub fn outer(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Outer(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Mul(a, b))
    }

    /// Adds vector `row` to every row of matrix `m`.
    pub fn add_row(&mut self, m: NodeId, row: NodeId) -> Result<NodeId> {
        self.record(Op::AddRow(m, row))
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> Result<NodeId> {
        self.record(Op::Affine(a, k, 0.0))
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: NodeId, scale: f64, shift: f64) -> Result<NodeId> {
        self.record(Op::Affine(a, scale, shift))
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Affine(a, -1.0, 1.0))
    }

    /// Multiplies `a` by the one-element tensor `s`.
    pub fn scale_by(&mut self, s: NodeId, a: NodeId) -> Result<NodeId> {
        self.record(Op::ScaleBy(s, a))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Sigmoid(a))
    }

    /// Softmax of a vector, or of each row of a matrix.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Softmax(a))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.record(Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.record(Op::Slice(a, start, len))
    }

    pub fn row(&mut self, m: NodeId, i: usize) -> Result<NodeId> {
        self.record(Op::Row(m, i))
    }

    pub fn stack(&mut self, rows: &[NodeId]) -> Result<NodeId> {
        self.record(Op::Stack(rows.to_vec()))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.record(Op::Sum(a))
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.record(Op::Dot(a, b))
    }

    /// Elementwise product with a fixed mask (dropout).
    pub fn mask(&mut self, a: NodeId, mask: Rc<[f64]>) -> Result<NodeId> {
        self.record(Op::Mask(a, mask))
    }

    /// `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        self.record(Op::CrossEntropy(logits, target))
    }

    /// Re-evaluates every node with the given leaf values substituted, and
    /// returns the registered outputs.
    pub fn forward(&mut self, bindings: &HashMap<String, Tensor>) -> Result<HashMap<String, Tensor>> {
        for (name, value) in bindings {
            let id = self
                .leaf_id(name)
                .ok_or_else(|| AutodiffError::UnknownLeaf(name.clone()))?;
            let node = &mut self.nodes[id.0];
            if node.value.shape != value.shape {
                return Err(AutodiffError::ShapeMismatch {
                    node: id.0,
                    op: "bind",
                    detail: format!(
                        "leaf `{name}` has shape {:?}, got {:?}",
                        node.value.shape,
                        value.shape()
                    ),
                });
            }
            node.value = value.clone();
        }
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf { .. }) {
                continue;
            }
            let value = eval(&self.nodes[i].op, &self.nodes, i)?;
            self.nodes[i].value = value;
        }
        Ok(self
            .outputs
            .iter()
            .map(|(k, id)| (k.clone(), self.nodes[id.0].value.clone()))
            .collect())
    }

    /// Gradient of the scalar node `seed` with respect to every node that
    /// depends on a trainable leaf.
    pub fn backward(&self, seed: NodeId) -> Result<Gradients> {
        let seed_value = &self.nodes[seed.0].value;
        if seed_value.len() != 1 {
            return Err(AutodiffError::NotScalar {
                node: seed.0,
                shape: seed_value.shape.clone(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[seed.0] = Some(vec![1.0]);

        for i in (0..=seed.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf { .. }) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            // keep intermediate grads available for inspection
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            graph_leaves: self
                .nodes
                .iter()
                .enumerate()
                .filter_map(|(i, n)| match &n.op {
                    Op::Leaf {
                        name: Some(name),
                        trainable: true,
                    } => Some((name.clone(), (NodeId(i), n.value.shape.clone()))),
                    _ => None,
                })
                .collect(),
        })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |n: &NodeId| &nodes[n.0].value;
        let wants = |n: &NodeId| nodes[n.0].requires_grad;
        fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], n: NodeId) -> &'a mut Vec<f64> {
            grads[n.0].get_or_insert_with(|| vec![0.0; nodes[n.0].value.len()])
        }
        let out = &nodes[i].value;
        match &nodes[i].op {
            Op::Leaf { .. } => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(a), val(b));
                let (r, k) = (av.rows(), av.cols());
                if bv.rank() == 1 {
                    if wants(a) {
                        let ga = slot(grads, nodes, *a);
                        for (row, &gi) in ga.chunks_mut(k).zip(g) {
                            axpy(gi, &bv.data, row);
                        }
                    }
                    if wants(b) {
                        let gb = slot(grads, nodes, *b);
                        for (row, &gi) in av.data.chunks(k).zip(g) {
                            axpy(gi, row, gb);
                        }
                    }
                } else {
                    let c = bv.cols();
                    if wants(a) {
                        let ga = slot(grads, nodes, *a);
                        for ii in 0..r {
                            let grow = &g[ii * c..(ii + 1) * c];
                            for l in 0..k {
                                ga[ii * k + l] += dot(grow, bv.row(l));
                            }
                        }
                    }
                    if wants(b) {
                        let gb = slot(grads, nodes, *b);
                        for ii in 0..r {
                            let grow = &g[ii * c..(ii + 1) * c];
                            for l in 0..k {
                                axpy(av.data[ii * k + l], grow, &mut gb[l * c..(l + 1) * c]);
                            }
                        }
                    }
                }
            }
            Op::MatMulNT(a, b) => {
                let (av, bv) = (val(a), val(b));
                let (r, k, c) = (av.rows(), av.cols(), bv.rows());
                if wants(a) {
                    let ga = slot(grads, nodes, *a);
                    for ii in 0..r {
                        for j in 0..c {
                            axpy(g[ii * c + j], bv.row(j), &mut ga[ii * k..(ii + 1) * k]);
                        }
                    }
                }
                if wants(b) {
                    let gb = slot(grads, nodes, *b);
                    for ii in 0..r {
                        for j in 0..c {
                            axpy(g[ii * c + j], av.row(ii), &mut gb[j * k..(j + 1) * k]);
                        }
                    }
                }
            }
            Op::VecMat(w, m) => {
                let (wv, mv) = (val(w), val(m));
                let c = mv.cols();
                if wants(w) {
                    let gw = slot(grads, nodes, *w);
                    for (ii, gwi) in gw.iter_mut().enumerate() {
                        *gwi += dot(g, mv.row(ii));
                    }
                }
                if wants(m) {
                    let gm = slot(grads, nodes, *m);
                    for (ii, &wi) in wv.data.iter().enumerate() {
                        axpy(wi, g, &mut gm[ii * c..(ii + 1) * c]);
                    }
                }
            }
            Op::Outer(a, b) => {
                let (av, bv) = (val(a), val(b));
                let c = bv.len();
                if wants(a) {
                    let ga = slot(grads, nodes, *a);
                    for (ii, gai) in ga.iter_mut().enumerate() {
                        *gai += dot(&g[ii * c..(ii + 1) * c], &bv.data);
                    }
                }
                if wants(b) {
                    let gb = slot(grads, nodes, *b);
                    for (ii, &ai) in av.data.iter().enumerate() {
                        axpy(ai, &g[ii * c..(ii + 1) * c], gb);
                    }
                }
            }
            Op::Add(a, b) => {
                if wants(a) {
                    axpy(1.0, g, slot(grads, nodes, *a));
                }
                if wants(b) {
                    axpy(1.0, g, slot(grads, nodes, *b));
                }
            }
            Op::Sub(a, b) => {
                if wants(a) {
                    axpy(1.0, g, slot(grads, nodes, *a));
                }
                if wants(b) {
                    axpy(-1.0, g, slot(grads, nodes, *b));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(a), val(b));
                if wants(a) {
                    let ga = slot(grads, nodes, *a);
                    for ((x, gi), y) in ga.iter_mut().zip(g).zip(&bv.data) {
                        *x += gi * y;
                    }
                }
                if wants(b) {
                    let gb = slot(grads, nodes, *b);
                    for ((x, gi), y) in gb.iter_mut().zip(g).zip(&av.data) {
                        *x += gi * y;
                    }
                }
            }
            Op::AddRow(m, r) => {
                if wants(m) {
                    axpy(1.0, g, slot(grads, nodes, *m));
                }
                if wants(r) {
                    let gr = slot(grads, nodes, *r);
                    for row in g.chunks(gr.len()) {
                        axpy(1.0, row, gr);
                    }
                }
            }
            Op::Affine(a, scale, _) => {
                if wants(a) {
                    axpy(*scale, g, slot(grads, nodes, *a));
                }
            }
            Op::ScaleBy(s, a) => {
                let (sv, av) = (val(s), val(a));
                if wants(s) {
                    slot(grads, nodes, *s)[0] += dot(g, &av.data);
                }
                if wants(a) {
                    axpy(sv.data[0], g, slot(grads, nodes, *a));
                }
            }
            Op::Tanh(a) => {
                if wants(a) {
                    let ga = slot(grads, nodes, *a);
                    for ((x, gi), y) in ga.iter_mut().zip(g).zip(&out.data) {
                        *x += gi * (1.0 - y * y);
                    }
                }
            }
            Op::Sigmoid(a) => {
                if wants(a) {
                    let ga = slot(grads, nodes, *a);
                    for ((x, gi), y) in ga.iter_mut().zip(g).zip(&out.data) {
                        *x += gi * y * (1.0 - y);
                    }
                }
            }
            Op::Softmax(a) => {
                if wants(a) {
                    let width = if out.rank() == 1 { out.len() } else { out.cols() };
                    let ga = slot(grads, nodes, *a);
                    for ((gr, yr), xr) in g.chunks(width).zip(out.data.chunks(width)).zip(ga.chunks_mut(width)) {
                        let inner = dot(gr, yr);
                        for ((x, gi), y) in xr.iter_mut().zip(gr).zip(yr) {
                            *x += y * (gi - inner);
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = val(p).len();
                    if wants(p) {
                        axpy(1.0, &g[offset..offset + n], slot(grads, nodes, *p));
                    }
                    offset += n;
                }
            }
            Op::Slice(a, start, len) => {
                if wants(a) {
                    axpy(1.0, g, &mut slot(grads, nodes, *a)[*start..start + len]);
                }
            }
            Op::Row(m, r) => {
                if wants(m) {
                    let c = g.len();
                    axpy(1.0, g, &mut slot(grads, nodes, *m)[r * c..(r + 1) * c]);
                }
            }
            Op::Stack(rows) => {
                let c = out.cols();
                for (ii, p) in rows.iter().enumerate() {
                    if wants(p) {
                        axpy(1.0, &g[ii * c..(ii + 1) * c], slot(grads, nodes, *p));
                    }
                }
            }
            Op::Sum(a) => {
                if wants(a) {
                    for x in slot(grads, nodes, *a).iter_mut() {
                        *x += g[0];
                    }
                }
            }
            Op::Dot(a, b) => {
                let (av, bv) = (val(a), val(b));
                if wants(a) {
                    axpy(g[0], &bv.data, slot(grads, nodes, *a));
                }
                if wants(b) {
                    axpy(g[0], &av.data, slot(grads, nodes, *b));
                }
            }
            Op::Mask(a, mask) => {
                if wants(a) {
                    let ga = slot(grads, nodes, *a);
                    for ((x, gi), m) in ga.iter_mut().zip(g).zip(mask.iter()) {
                        *x += gi * m;
                    }
                }
            }
            Op::CrossEntropy(a, target) => {
                if wants(a) {
                    let p = softmax(&val(a).data);
                    let ga = slot(grads, nodes, *a);
                    for (k, (x, pk)) in ga.iter_mut().zip(&p).enumerate() {
                        let onehot = if k == *target { 1.0 } else { 0.0 };
                        *x += g[0] * (pk - onehot);
                    }
                }
            }
        }
    }
}

/// Result of [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    graph_leaves: BTreeMap<String, (NodeId, Vec<usize>)>,
}

impl Gradients {
    /// Gradient with respect to any node; zero when the seed does not depend on it.
    pub fn wrt(&self, id: NodeId, shape: &[usize]) -> Tensor {
        match &self.grads[id.0] {
            Some(g) => Tensor {
                shape: shape.to_vec(),
                data: g.clone(),
            },
            None => Tensor::zeros(shape),
        }
    }

    /// Gradient for the trainable leaf `name`.
    pub fn leaf(&self, name: &str) -> Option<Tensor> {
        self.graph_leaves.get(name).map(|(id, shape)| self.wrt(*id, shape))
    }

    /// Every trainable leaf's gradient, keyed by name. Untouched leaves are zero.
    pub fn params(&self) -> BTreeMap<String, Tensor> {
        self.graph_leaves
            .iter()
            .map(|(name, (id, shape))| (name.clone(), self.wrt(*id, shape)))
            .collect()
    }
}

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor, eps: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(AutodiffError::BadStep(eps));
    }
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + eps;
        let plus = f(&probe)?;
        probe.data[i] = orig - eps;
        let minus = f(&probe)?;
        probe.data[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(AutodiffError::NonFiniteObjective(i));
        }
        out.data[i] = (plus - minus) / (2.0 * eps);
    }
    Ok(out)
}

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}
