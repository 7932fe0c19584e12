//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] is a define-by-run arena: every op validates its operands,
//! computes its value immediately, and records itself for the backward
//! sweep. Node indices are topological by construction (an op can only
//! reference earlier nodes), so `forward` re-evaluates in arena order and
//! `backward` walks it in reverse, accumulating vector-Jacobian products.
//!
//! The op set is exactly what the relation-matching models need: vector
//! arithmetic, matrix-vector products, row lookups, the gated activations,
//! cosine similarity with a zero-vector guard, the multi-perspective cosine
//! used by the matcher, a guarded division for attention means, and
//! element-wise max with lowest-index subgradient routing.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Tensor, NORM_EPS};

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// Element-wise product; one side may be a one-element tensor, which
    /// broadcasts over the other.
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    /// `m` is rows x cols, `x` has cols elements; result has rows elements.
    MatVec { m: NodeId, x: NodeId },
    /// Row `k` of a rank-2 node, as a vector.
    Row { m: NodeId, k: usize },
    Concat(Vec<NodeId>),
    Sum(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Abs(NodeId),
    Dot(NodeId, NodeId),
    /// Cosine similarity with the zero-vector convention: value 0 and no
    /// gradient when either operand's norm is below `NORM_EPS`.
    Cosine(NodeId, NodeId),
    /// Multi-perspective cosine: row k of `w` reweights both vectors before
    /// cosine, giving one output element per row of `w`.
    MpCosine {
        w: NodeId,
        v1: NodeId,
        v2: NodeId,
    },
    /// `num / max(den, floor)`; gradient flows to `den` only when it is at
    /// or above the floor.
    DivGuard {
        num: NodeId,
        den: NodeId,
        floor: f64,
    },
    /// Element-wise max across same-shape inputs; per element the gradient
    /// routes to the lowest-index input attaining the max.
    EMax(Vec<NodeId>),
}

struct Node {
    op: Op,
    value: Tensor,
    grad: Tensor,
}

/// Gradients of one backward pass, keyed by parameter.
#[derive(Debug)]
pub struct Gradients {
    by_param: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(id.index()).and_then(|g| g.as_ref())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.by_param
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|t| (ParamId(i), t)))
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bindings: Vec<(ParamId, NodeId)>,
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

    pub fn value(&self, n: NodeId) -> &Tensor {
        &self.nodes[n].value
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, n: NodeId) -> f64 {
        self.nodes[n].value.item()
    }

    pub fn grad(&self, n: NodeId) -> &Tensor {
        &self.nodes[n].grad
    }

    /// Leaf node holding a constant or an externally managed value.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        let grad = Tensor::zeros(value.shape());
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            grad,
        });
        self.nodes.len() - 1
    }

    pub fn scalar(&mut self, x: f64) -> NodeId {
        self.leaf(Tensor::scalar(x))
    }

    pub fn zeros(&mut self, shape: &[usize]) -> NodeId {
        self.leaf(Tensor::zeros(shape))
    }

    /// Bind a parameter: copies its current value into a leaf. Binding the
    /// same parameter twice returns the same node, so every view of a model
    /// shares one registration per parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        if let Some(&(_, n)) = self.bindings.iter().find(|(p, _)| *p == id) {
            return n;
        }
        let n = self.leaf(store.get(id).clone());
        self.bindings.push((id, n));
        n
    }

    pub fn bound_params(&self) -> &[(ParamId, NodeId)] {
        &self.bindings
    }

    /// Replace a leaf's value (same shape). Used by finite-difference
    /// probing and by forward re-evaluation tests.
    pub fn set_leaf(&mut self, n: NodeId, value: Tensor) -> Result<()> {
        if !matches!(self.nodes[n].op, Op::Leaf) {
            return Err(Error::NotALeaf(n));
        }
        if value.shape() != self.nodes[n].value.shape() {
            return Err(Error::ShapeMismatch {
                op: "set_leaf",
                left: self.nodes[n].value.shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        self.nodes[n].value = value;
        Ok(())
    }

    pub fn nudge_leaf(&mut self, n: NodeId, elem: usize, delta: f64) -> Result<()> {
        if !matches!(self.nodes[n].op, Op::Leaf) {
            return Err(Error::NotALeaf(n));
        }
        self.nodes[n].value.data_mut()[elem] += delta;
        Ok(())
    }

    // ── op constructors ──────────────────────────────────────────────

    fn push(&mut self, op: Op) -> Result<NodeId> {
        let value = self.compute(&op)?;
        let grad = Tensor::zeros(value.shape());
        self.nodes.push(Node { op, value, grad });
        Ok(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.push(Op::Scale(a, c))
    }

    pub fn matvec(&mut self, m: NodeId, x: NodeId) -> Result<NodeId> {
        self.push(Op::MatVec { m, x })
    }

    pub fn row(&mut self, m: NodeId, k: usize) -> Result<NodeId> {
        self.push(Op::Row { m, k })
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.push(Op::Concat(parts.to_vec()))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sum(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Tanh(a))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Relu(a))
    }

    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Abs(a))
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Dot(a, b))
    }

    pub fn cosine(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Cosine(a, b))
    }

    pub fn mp_cosine(&mut self, w: NodeId, v1: NodeId, v2: NodeId) -> Result<NodeId> {
        self.push(Op::MpCosine { w, v1, v2 })
    }

    pub fn div_guard(&mut self, num: NodeId, den: NodeId, floor: f64) -> Result<NodeId> {
        self.push(Op::DivGuard { num, den, floor })
    }

    pub fn emax(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        self.push(Op::EMax(inputs.to_vec()))
    }

    // ── forward ──────────────────────────────────────────────────────

    /// Re-evaluate every node up to and including `root` from current leaf
    /// values, in topological (arena) order, each node exactly once.
    pub fn forward(&mut self, root: NodeId) -> Result<()> {
        for n in 0..=root {
            if matches!(self.nodes[n].op, Op::Leaf) {
                continue;
            }
            let op = self.nodes[n].op.clone();
            self.nodes[n].value = self.compute(&op)?;
        }
        Ok(())
    }

    fn shapes_err(&self, op: &'static str, a: NodeId, b: NodeId) -> Error {
        Error::ShapeMismatch {
            op,
            left: self.nodes[a].value.shape().to_vec(),
            right: self.nodes[b].value.shape().to_vec(),
        }
    }

    fn compute(&self, op: &Op) -> Result<Tensor> {
        match *op {
            Op::Leaf => unreachable!("leaf values are assigned, not computed"),
            Op::Add(a, b) => {
                let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
                if va.shape() != vb.shape() {
                    return Err(self.shapes_err("add", a, b));
                }
                let data = va.data().iter().zip(vb.data()).map(|(x, y)| x + y).collect();
                Tensor::new(va.shape().to_vec(), data)
            }
            Op::Sub(a, b) => {
                let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
                if va.shape() != vb.shape() {
                    return Err(self.shapes_err("sub", a, b));
                }
                let data = va.data().iter().zip(vb.data()).map(|(x, y)| x - y).collect();
                Tensor::new(va.shape().to_vec(), data)
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
                if va.shape() == vb.shape() {
                    let data = va.data().iter().zip(vb.data()).map(|(x, y)| x * y).collect();
                    Tensor::new(va.shape().to_vec(), data)
                } else if va.is_scalar() {
                    let s = va.item();
                    Tensor::new(vb.shape().to_vec(), vb.data().iter().map(|y| s * y).collect())
                } else if vb.is_scalar() {
                    let s = vb.item();
                    Tensor::new(va.shape().to_vec(), va.data().iter().map(|x| x * s).collect())
                } else {
                    Err(self.shapes_err("mul", a, b))
                }
            }
            Op::Scale(a, c) => {
                let va = &self.nodes[a].value;
                Tensor::new(
                    va.shape().to_vec(),
                    va.data().iter().map(|x| c * x).collect(),
                )
            }
            Op::MatVec { m, x } => {
                let (vm, vx) = (&self.nodes[m].value, &self.nodes[x].value);
                if vm.shape().len() != 2 || vm.cols() != vx.numel() {
                    return Err(self.shapes_err("matvec", m, x));
                }
                let rows = vm.rows();
                let mut out = vec![0.0; rows];
                for (i, o) in out.iter_mut().enumerate() {
                    *o = vm
                        .row(i)
                        .iter()
                        .zip(vx.data())
                        .map(|(w, v)| w * v)
                        .sum();
                }
                Ok(Tensor::vector(&out))
            }
            Op::Row { m, k } => {
                let vm = &self.nodes[m].value;
                if vm.shape().len() != 2 || k >= vm.rows() {
                    return Err(Error::ShapeMismatch {
                        op: "row",
                        left: vm.shape().to_vec(),
                        right: vec![k],
                    });
                }
                Ok(Tensor::vector(vm.row(k)))
            }
            Op::Concat(ref parts) => {
                if parts.is_empty() {
                    return Err(Error::Empty { what: "concat" });
                }
                let mut data = Vec::new();
                for &p in parts {
                    data.extend_from_slice(self.nodes[p].value.data());
                }
                Ok(Tensor::vector(&data))
            }
            Op::Sum(a) => Ok(Tensor::scalar(self.nodes[a].value.data().iter().sum())),
            Op::Sigmoid(a) => {
                let va = &self.nodes[a].value;
                Tensor::new(
                    va.shape().to_vec(),
                    va.data().iter().map(|&x| sigmoid(x)).collect(),
                )
            }
            Op::Tanh(a) => {
                let va = &self.nodes[a].value;
                Tensor::new(
                    va.shape().to_vec(),
                    va.data().iter().map(|x| x.tanh()).collect(),
                )
            }
            Op::Relu(a) => {
                let va = &self.nodes[a].value;
                Tensor::new(
                    va.shape().to_vec(),
                    va.data().iter().map(|x| x.max(0.0)).collect(),
                )
            }
            Op::Abs(a) => {
                let va = &self.nodes[a].value;
                Tensor::new(
                    va.shape().to_vec(),
                    va.data().iter().map(|x| x.abs()).collect(),
                )
            }
            Op::Dot(a, b) => {
                let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
                if va.shape() != vb.shape() {
                    return Err(self.shapes_err("dot", a, b));
                }
                Ok(Tensor::scalar(
                    va.data().iter().zip(vb.data()).map(|(x, y)| x * y).sum(),
                ))
            }
            Op::Cosine(a, b) => {
                let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
                if va.shape() != vb.shape() {
                    return Err(self.shapes_err("cosine", a, b));
                }
                Ok(Tensor::scalar(crate::tensor::cosine_value(
                    va.data(),
                    vb.data(),
                )))
            }
            Op::MpCosine { w, v1, v2 } => {
                let vw = &self.nodes[w].value;
                let (va, vb) = (&self.nodes[v1].value, &self.nodes[v2].value);
                if va.shape() != vb.shape() {
                    return Err(self.shapes_err("mp_cosine", v1, v2));
                }
                if vw.shape().len() != 2 || vw.cols() != va.numel() {
                    return Err(self.shapes_err("mp_cosine", w, v1));
                }
                let mut out = vec![0.0; vw.rows()];
                let mut wa = vec![0.0; va.numel()];
                let mut wb = vec![0.0; va.numel()];
                for (k, o) in out.iter_mut().enumerate() {
                    let row = vw.row(k);
                    for j in 0..wa.len() {
                        wa[j] = row[j] * va.data()[j];
                        wb[j] = row[j] * vb.data()[j];
                    }
                    *o = crate::tensor::cosine_value(&wa, &wb);
                }
                Ok(Tensor::vector(&out))
            }
            Op::DivGuard { num, den, floor } => {
                let vd = &self.nodes[den].value;
                if !vd.is_scalar() {
                    return Err(Error::NotScalar {
                        op: "div_guard",
                        shape: vd.shape().to_vec(),
                    });
                }
                let d = vd.item().max(floor);
                let vn = &self.nodes[num].value;
                Tensor::new(
                    vn.shape().to_vec(),
                    vn.data().iter().map(|x| x / d).collect(),
                )
            }
            Op::EMax(ref inputs) => {
                if inputs.is_empty() {
                    return Err(Error::Empty { what: "emax" });
                }
                let first = &self.nodes[inputs[0]].value;
                let mut out = first.data().to_vec();
                for &n in &inputs[1..] {
                    let v = &self.nodes[n].value;
                    if v.shape() != first.shape() {
                        return Err(self.shapes_err("emax", inputs[0], n));
                    }
                    for (o, x) in out.iter_mut().zip(v.data()) {
                        if *x > *o {
                            *o = *x;
                        }
                    }
                }
                Tensor::new(first.shape().to_vec(), out)
            }
        }
    }

    // ── backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Zeroes all gradients, seeds the
    /// loss with 1, accumulates by sum over all paths, and returns the
    /// gradients of bound parameters. Leaves with no path to the loss keep
    /// zero gradient.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients> {
        if !self.nodes[loss].value.is_scalar() {
            return Err(Error::NotScalar {
                op: "backward",
                shape: self.nodes[loss].value.shape().to_vec(),
            });
        }
        for node in &mut self.nodes {
            node.grad.fill(0.0);
        }
        self.nodes[loss].grad.fill(1.0);

        let mut reached = vec![false; self.nodes.len()];
        reached[loss] = true;

        for n in (0..=loss).rev() {
            if !reached[n] {
                continue;
            }
            let op = self.nodes[n].op.clone();
            let g = self.nodes[n].grad.clone();
            self.backprop(n, &op, &g, &mut reached);
        }

        let max_id = self.bindings.iter().map(|(p, _)| p.index()).max();
        let mut by_param: Vec<Option<Tensor>> = vec![None; max_id.map_or(0, |m| m + 1)];
        for &(p, node) in &self.bindings {
            by_param[p.index()] = Some(self.nodes[node].grad.clone());
        }
        Ok(Gradients { by_param })
    }

    fn backprop(&mut self, n: NodeId, op: &Op, g: &Tensor, reached: &mut [bool]) {
        let mark = |id: NodeId, reached: &mut [bool]| reached[id] = true;
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for (ga, &ge) in self.nodes[a].grad.data_mut().iter_mut().zip(g.data()) {
                    *ga += ge;
                }
                for (gb, &ge) in self.nodes[b].grad.data_mut().iter_mut().zip(g.data()) {
                    *gb += ge;
                }
                mark(a, reached);
                mark(b, reached);
            }
            Op::Sub(a, b) => {
                for (ga, &ge) in self.nodes[a].grad.data_mut().iter_mut().zip(g.data()) {
                    *ga += ge;
                }
                for (gb, &ge) in self.nodes[b].grad.data_mut().iter_mut().zip(g.data()) {
                    *gb -= ge;
                }
                mark(a, reached);
                mark(b, reached);
            }
            Op::Mul(a, b) => {
                let va = self.nodes[a].value.clone();
                let vb = self.nodes[b].value.clone();
                if va.shape() == vb.shape() {
                    for ((ga, &ge), y) in self.nodes[a]
                        .grad
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(vb.data())
                    {
                        *ga += ge * y;
                    }
                    for ((gb, &ge), x) in self.nodes[b]
                        .grad
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(va.data())
                    {
                        *gb += ge * x;
                    }
                } else if va.is_scalar() {
                    let acc: f64 = g.data().iter().zip(vb.data()).map(|(ge, y)| ge * y).sum();
                    self.nodes[a].grad.data_mut()[0] += acc;
                    let s = va.item();
                    for (gb, &ge) in self.nodes[b].grad.data_mut().iter_mut().zip(g.data()) {
                        *gb += ge * s;
                    }
                } else {
                    let acc: f64 = g.data().iter().zip(va.data()).map(|(ge, x)| ge * x).sum();
                    self.nodes[b].grad.data_mut()[0] += acc;
                    let s = vb.item();
                    for (ga, &ge) in self.nodes[a].grad.data_mut().iter_mut().zip(g.data()) {
                        *ga += ge * s;
                    }
                }
                mark(a, reached);
                mark(b, reached);
            }
            Op::Scale(a, c) => {
                for (ga, &ge) in self.nodes[a].grad.data_mut().iter_mut().zip(g.data()) {
                    *ga += c * ge;
                }
                mark(a, reached);
            }
            Op::MatVec { m, x } => {
                let vm = self.nodes[m].value.clone();
                let vx = self.nodes[x].value.clone();
                {
                    let gm = self.nodes[m].grad.data_mut();
                    let cols = vx.numel();
                    for (i, &ge) in g.data().iter().enumerate() {
                        for (j, &xv) in vx.data().iter().enumerate() {
                            gm[i * cols + j] += ge * xv;
                        }
                    }
                }
                {
                    let gx = self.nodes[x].grad.data_mut();
                    for (i, &ge) in g.data().iter().enumerate() {
                        for (j, gxe) in gx.iter_mut().enumerate() {
                            *gxe += ge * vm.row(i)[j];
                        }
                    }
                }
                mark(m, reached);
                mark(x, reached);
            }
            Op::Row { m, k } => {
                let cols = self.nodes[m].value.cols();
                let gm = self.nodes[m].grad.data_mut();
                for (j, &ge) in g.data().iter().enumerate() {
                    gm[k * cols + j] += ge;
                }
                mark(m, reached);
            }
            Op::Concat(ref parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p].value.numel();
                    for (gp, &ge) in self.nodes[p]
                        .grad
                        .data_mut()
                        .iter_mut()
                        .zip(&g.data()[offset..offset + len])
                    {
                        *gp += ge;
                    }
                    offset += len;
                    mark(p, reached);
                }
            }
            Op::Sum(a) => {
                let ge = g.item();
                for ga in self.nodes[a].grad.data_mut() {
                    *ga += ge;
                }
                mark(a, reached);
            }
            Op::Sigmoid(a) => {
                let y = self.nodes[n].value.clone();
                for ((ga, &ge), &yv) in self.nodes[a]
                    .grad
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(y.data())
                {
                    *ga += ge * yv * (1.0 - yv);
                }
                mark(a, reached);
            }
            Op::Tanh(a) => {
                let y = self.nodes[n].value.clone();
                for ((ga, &ge), &yv) in self.nodes[a]
                    .grad
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(y.data())
                {
                    *ga += ge * (1.0 - yv * yv);
                }
                mark(a, reached);
            }
            Op::Relu(a) => {
                let x = self.nodes[a].value.clone();
                for ((ga, &ge), &xv) in self.nodes[a]
                    .grad
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(x.data())
                {
                    if xv > 0.0 {
                        *ga += ge;
                    }
                }
                mark(a, reached);
            }
            Op::Abs(a) => {
                let x = self.nodes[a].value.clone();
                for ((ga, &ge), &xv) in self.nodes[a]
                    .grad
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(x.data())
                {
                    if xv > 0.0 {
                        *ga += ge;
                    } else if xv < 0.0 {
                        *ga -= ge;
                    }
                }
                mark(a, reached);
            }
            Op::Dot(a, b) => {
                let ge = g.item();
                let va = self.nodes[a].value.clone();
                let vb = self.nodes[b].value.clone();
                for (ga, &y) in self.nodes[a].grad.data_mut().iter_mut().zip(vb.data()) {
                    *ga += ge * y;
                }
                for (gb, &x) in self.nodes[b].grad.data_mut().iter_mut().zip(va.data()) {
                    *gb += ge * x;
                }
                mark(a, reached);
                mark(b, reached);
            }
            Op::Cosine(a, b) => {
                let ge = g.item();
                let va = self.nodes[a].value.clone();
                let vb = self.nodes[b].value.clone();
                if let Some((da, db)) = cosine_vjp(va.data(), vb.data()) {
                    for (ga, d) in self.nodes[a].grad.data_mut().iter_mut().zip(&da) {
                        *ga += ge * d;
                    }
                    for (gb, d) in self.nodes[b].grad.data_mut().iter_mut().zip(&db) {
                        *gb += ge * d;
                    }
                }
                mark(a, reached);
                mark(b, reached);
            }
            Op::MpCosine { w, v1, v2 } => {
                let vw = self.nodes[w].value.clone();
                let va = self.nodes[v1].value.clone();
                let vb = self.nodes[v2].value.clone();
                let d = va.numel();
                let mut wa = vec![0.0; d];
                let mut wb = vec![0.0; d];
                for (k, &ge) in g.data().iter().enumerate() {
                    if ge == 0.0 {
                        continue;
                    }
                    let row = vw.row(k);
                    for j in 0..d {
                        wa[j] = row[j] * va.data()[j];
                        wb[j] = row[j] * vb.data()[j];
                    }
                    if let Some((da, db)) = cosine_vjp(&wa, &wb) {
                        let gw = self.nodes[w].grad.row_mut(k);
                        for j in 0..d {
                            gw[j] += ge * (da[j] * va.data()[j] + db[j] * vb.data()[j]);
                        }
                        let g1 = self.nodes[v1].grad.data_mut();
                        for j in 0..d {
                            g1[j] += ge * da[j] * row[j];
                        }
                        let g2 = self.nodes[v2].grad.data_mut();
                        for j in 0..d {
                            g2[j] += ge * db[j] * row[j];
                        }
                    }
                }
                mark(w, reached);
                mark(v1, reached);
                mark(v2, reached);
            }
            Op::DivGuard { num, den, floor } => {
                let s = self.nodes[den].value.item();
                let d = s.max(floor);
                for (gn, &ge) in self.nodes[num].grad.data_mut().iter_mut().zip(g.data()) {
                    *gn += ge / d;
                }
                if s >= floor {
                    let out = self.nodes[n].value.clone();
                    let acc: f64 = g.data().iter().zip(out.data()).map(|(ge, o)| ge * o).sum();
                    self.nodes[den].grad.data_mut()[0] -= acc / d;
                }
                mark(num, reached);
                mark(den, reached);
            }
            Op::EMax(ref inputs) => {
                let out = self.nodes[n].value.clone();
                for (e, (&ge, &oe)) in g.data().iter().zip(out.data()).enumerate() {
                    if ge == 0.0 {
                        continue;
                    }
                    for &inp in inputs {
                        if self.nodes[inp].value.data()[e] == oe {
                            self.nodes[inp].grad.data_mut()[e] += ge;
                            break;
                        }
                    }
                }
                for &inp in inputs {
                    mark(inp, reached);
                }
            }
        }
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Jacobian rows of cosine(a, b) w.r.t. `a` and `b`, or `None` in the
/// zero-vector regime (no gradient by convention).
fn cosine_vjp(a: &[f64], b: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    let mut dot = 0.0;
    let mut na2 = 0.0;
    let mut nb2 = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na2 += x * x;
        nb2 += y * y;
    }
    let na = na2.sqrt();
    let nb = nb2.sqrt();
    if na < NORM_EPS || nb < NORM_EPS {
        return None;
    }
    let c = dot / (na * nb);
    let da: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| y / (na * nb) - c * x / na2)
        .collect();
    let db: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x / (na * nb) - c * y / nb2)
        .collect();
    Some((da, db))
}
