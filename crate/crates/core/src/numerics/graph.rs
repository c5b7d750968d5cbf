//! Tape-based reverse-mode differentiation.
//!
//! Nodes are appended in evaluation order, so node ids are a topological
//! order by construction. Parameter leaves borrow their values from a
//! [`ParamStore`] and route gradients straight into a [`Gradients`] buffer.

use super::params::{Gradients, ParamId, ParamStore};
use super::tensor::{sigmoid, softmax_slice, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Affine { x: NodeId, mul: f64 },
    MulScalar(NodeId, NodeId),
    Broadcast(NodeId),
    MatVec(NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Softmax(NodeId),
    Log { x: NodeId, floor: f64 },
    Concat(Vec<NodeId>),
    Slice { x: NodeId, start: usize },
    Row { table: NodeId, row: usize },
    Pick { x: NodeId, index: usize },
    Sum(NodeId),
    Dot(NodeId, NodeId),
    WeightedSum { weights: NodeId, items: Vec<NodeId> },
    Stack(Vec<NodeId>),
    Dropout { x: NodeId, mask: Vec<f64> },
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        use Op::*;
        match self {
            Input | Param(_) => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | MulScalar(a, b) | MatVec(a, b)
            | Dot(a, b) => vec![*a, *b],
            Affine { x, .. }
            | Broadcast(x)
            | Tanh(x)
            | Sigmoid(x)
            | Softmax(x)
            | Log { x, .. }
            | Slice { x, .. }
            | Pick { x, .. }
            | Sum(x)
            | Dropout { x, .. } => vec![*x],
            Row { table, .. } => vec![*table],
            Concat(xs) | Stack(xs) => xs.clone(),
            WeightedSum { weights, items } => {
                let mut v = vec![*weights];
                v.extend(items);
                v
            }
        }
    }
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Option<Tensor>,
    needs_grad: bool,
}

/// A computation graph recorded during one forward pass.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
    consumed: bool,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
            consumed: false,
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        self.tensor(id).data()
    }

    pub fn tensor(&self, id: NodeId) -> &Tensor {
        let node = &self.nodes[id.0];
        match (&node.op, &node.value) {
            (Op::Param(p), _) => self.params.get(*p),
            (_, Some(t)) => t,
            _ => unreachable!("non-parameter node without value"),
        }
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        self.value(id)[0]
    }

    fn push(&mut self, op: Op, value: Tensor, name: &'static str) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(Error::NonFinite(name));
        }
        let needs_grad = op.inputs().iter().any(|i| self.nodes[i.0].needs_grad);
        self.nodes.push(Node {
            op,
            value: Some(value),
            needs_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    /// Constant leaf; receives no gradient.
    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.nodes.push(Node {
            op: Op::Input,
            value: Some(t),
            needs_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, data: Vec<f64>) -> NodeId {
        self.input(Tensor::vector(data))
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.input(Tensor::scalar(v))
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes[id.0] {
            return n;
        }
        self.nodes.push(Node {
            op: Op::Param(id),
            value: None,
            needs_grad: true,
        });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(n);
        n
    }

    fn same_len(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<usize> {
        let (la, lb) = (self.value(a).len(), self.value(b).len());
        if la != lb {
            return Err(Error::Shape {
                op,
                expected: vec![la],
                got: vec![lb],
            });
        }
        Ok(la)
    }

    fn zip_with(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<NodeId> {
        self.same_len(name, a, b)?;
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(op, Tensor::vector(out), name)
    }

    fn map(&mut self, name: &'static str, x: NodeId, op: Op, f: impl Fn(f64) -> f64) -> Result<NodeId> {
        let out: Vec<f64> = self.value(x).iter().map(|&v| f(v)).collect();
        self.push(op, Tensor::vector(out), name)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_with("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    /// `mul * x + offset`, elementwise.
    pub fn affine(&mut self, x: NodeId, mul: f64, offset: f64) -> Result<NodeId> {
        self.map("affine", x, Op::Affine { x, mul }, |v| mul * v + offset)
    }

    pub fn scale(&mut self, x: NodeId, factor: f64) -> Result<NodeId> {
        self.affine(x, factor, 0.0)
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: NodeId) -> Result<NodeId> {
        self.affine(x, -1.0, 1.0)
    }

    /// Vector scaled by a scalar node.
    pub fn mul_scalar(&mut self, v: NodeId, s: NodeId) -> Result<NodeId> {
        self.expect_scalar("mul_scalar", s)?;
        let k = self.scalar_value(s);
        let out: Vec<f64> = self.value(v).iter().map(|x| x * k).collect();
        self.push(Op::MulScalar(v, s), Tensor::vector(out), "mul_scalar")
    }

    /// Repeat a scalar node `n` times.
    pub fn broadcast(&mut self, s: NodeId, n: usize) -> Result<NodeId> {
        self.expect_scalar("broadcast", s)?;
        let v = self.scalar_value(s);
        self.push(Op::Broadcast(s), Tensor::vector(vec![v; n]), "broadcast")
    }

    fn expect_scalar(&self, op: &'static str, s: NodeId) -> Result<()> {
        if self.value(s).len() != 1 {
            return Err(Error::Shape {
                op,
                expected: vec![1],
                got: self.tensor(s).shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Matrix-vector product `w · x` with `w` of shape `[m, n]`.
    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        let wt = self.tensor(w);
        let xv = self.value(x);
        if wt.shape().len() != 2 || wt.shape()[1] != xv.len() {
            return Err(Error::Shape {
                op: "matvec",
                expected: vec![wt.rows(), xv.len()],
                got: wt.shape().to_vec(),
            });
        }
        let n = xv.len();
        let out: Vec<f64> = wt
            .data()
            .chunks_exact(n)
            .map(|row| row.iter().zip(xv).map(|(a, b)| a * b).sum())
            .collect();
        self.push(Op::MatVec(w, x), Tensor::vector(out), "matvec")
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.map("tanh", x, Op::Tanh(x), f64::tanh)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.map("sigmoid", x, Op::Sigmoid(x), sigmoid)
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let out = softmax_slice(self.value(x))?;
        self.push(Op::Softmax(x), Tensor::vector(out), "softmax")
    }

    /// Natural log of `max(x, floor)`.
    pub fn log(&mut self, x: NodeId, floor: f64) -> Result<NodeId> {
        self.map("log", x, Op::Log { x, floor }, |v| v.max(floor).ln())
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Empty("concat"));
        }
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.value(p));
        }
        self.push(Op::Concat(parts.to_vec()), Tensor::vector(out), "concat")
    }

    pub fn slice(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = self.value(x);
        if len == 0 || start + len > v.len() {
            return Err(Error::Shape {
                op: "slice",
                expected: vec![start + len],
                got: vec![v.len()],
            });
        }
        let out = v[start..start + len].to_vec();
        self.push(Op::Slice { x, start }, Tensor::vector(out), "slice")
    }

    /// Row `row` of a rank-2 table (embedding lookup).
    pub fn row(&mut self, table: NodeId, row: usize) -> Result<NodeId> {
        let t = self.tensor(table);
        if t.shape().len() != 2 || row >= t.rows() {
            return Err(Error::Shape {
                op: "row",
                expected: vec![row + 1],
                got: t.shape().to_vec(),
            });
        }
        let out = t.row(row).to_vec();
        self.push(Op::Row { table, row }, Tensor::vector(out), "row")
    }

    pub fn pick(&mut self, x: NodeId, index: usize) -> Result<NodeId> {
        let v = self.value(x);
        if index >= v.len() {
            return Err(Error::Shape {
                op: "pick",
                expected: vec![index + 1],
                got: vec![v.len()],
            });
        }
        let out = v[index];
        self.push(Op::Pick { x, index }, Tensor::scalar(out), "pick")
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.value(x).iter().sum();
        self.push(Op::Sum(x), Tensor::scalar(s), "sum")
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_len("dot", a, b)?;
        let s = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).sum();
        self.push(Op::Dot(a, b), Tensor::scalar(s), "dot")
    }

    /// `Σ_i weights[i] * items[i]`.
    pub fn weighted_sum(&mut self, weights: NodeId, items: &[NodeId]) -> Result<NodeId> {
        let w = self.value(weights);
        if items.is_empty() || w.len() != items.len() {
            return Err(Error::Shape {
                op: "weighted_sum",
                expected: vec![items.len()],
                got: vec![w.len()],
            });
        }
        let dim = self.value(items[0]).len();
        let mut out = vec![0.0; dim];
        for (k, &item) in items.iter().enumerate() {
            let v = self.value(item);
            if v.len() != dim {
                return Err(Error::Shape {
                    op: "weighted_sum",
                    expected: vec![dim],
                    got: vec![v.len()],
                });
            }
            let wk = self.value(weights)[k];
            for (o, x) in out.iter_mut().zip(v) {
                *o += wk * x;
            }
        }
        self.push(
            Op::WeightedSum {
                weights,
                items: items.to_vec(),
            },
            Tensor::vector(out),
            "weighted_sum",
        )
    }

    /// Collect scalar nodes into one vector.
    pub fn stack(&mut self, scalars: &[NodeId]) -> Result<NodeId> {
        if scalars.is_empty() {
            return Err(Error::Empty("stack"));
        }
        let mut out = Vec::with_capacity(scalars.len());
        for &s in scalars {
            self.expect_scalar("stack", s)?;
            out.push(self.scalar_value(s));
        }
        self.push(Op::Stack(scalars.to_vec()), Tensor::vector(out), "stack")
    }

    /// Elementwise product with a fixed mask (inverted dropout).
    pub fn dropout(&mut self, x: NodeId, mask: Vec<f64>) -> Result<NodeId> {
        let v = self.value(x);
        if mask.len() != v.len() {
            return Err(Error::Shape {
                op: "dropout",
                expected: vec![v.len()],
                got: vec![mask.len()],
            });
        }
        let out = v.iter().zip(&mask).map(|(a, m)| a * m).collect();
        self.push(Op::Dropout { x, mask }, Tensor::vector(out), "dropout")
    }

    /// Accumulate d(loss)/d(param) into `grads`. A graph may be differentiated once.
    pub fn backward(&mut self, loss: NodeId, grads: &mut Gradients) -> Result<()> {
        if self.consumed {
            return Err(Error::BackwardTwice);
        }
        let loss_shape = self.tensor(loss).shape().to_vec();
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(loss_shape));
        }
        for (i, node) in self.nodes.iter().enumerate().take(loss.0 + 1) {
            if node.op.inputs().iter().any(|inp| inp.0 >= i) {
                return Err(Error::Cycle(i));
            }
        }
        self.consumed = true;

        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            if let Op::Param(p) = self.nodes[i].op {
                for (a, b) in grads.get_mut(p).iter_mut().zip(&g) {
                    *a += b;
                }
                continue;
            }
            self.propagate(i, &g, &mut adj);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |target: NodeId, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[target.0].needs_grad {
                return;
            }
            let len = self.value(target).len();
            let buf = adj[target.0].get_or_insert_with(|| vec![0.0; len]);
            f(buf);
        };
        let y = self.value(NodeId(i));
        match &nodes[i].op {
            Op::Input | Op::Param(_) => {}
            Op::Add(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| add_into(d, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |d| add_into(d, g));
                acc(*b, &mut |d| d.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * vb[k];
                    }
                });
                acc(*b, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * va[k];
                    }
                });
            }
            Op::Div(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] / vb[k];
                    }
                });
                acc(*b, &mut |d| {
                    for k in 0..d.len() {
                        d[k] -= g[k] * va[k] / (vb[k] * vb[k]);
                    }
                });
            }
            Op::Affine { x, mul } => {
                acc(*x, &mut |d| d.iter_mut().zip(g).for_each(|(a, b)| *a += mul * b));
            }
            Op::MulScalar(v, s) => {
                let k = self.scalar_value(*s);
                let vv = self.value(*v);
                acc(*v, &mut |d| d.iter_mut().zip(g).for_each(|(a, b)| *a += k * b));
                let ds: f64 = vv.iter().zip(g).map(|(a, b)| a * b).sum();
                acc(*s, &mut |d| d[0] += ds);
            }
            Op::Broadcast(s) => {
                let total: f64 = g.iter().sum();
                acc(*s, &mut |d| d[0] += total);
            }
            Op::MatVec(w, x) => {
                let wt = self.tensor(*w);
                let xv = self.value(*x);
                let n = xv.len();
                acc(*x, &mut |d| {
                    for (row, gi) in wt.data().chunks_exact(n).zip(g) {
                        if *gi != 0.0 {
                            for (dj, wij) in d.iter_mut().zip(row) {
                                *dj += gi * wij;
                            }
                        }
                    }
                });
                acc(*w, &mut |d| {
                    for (drow, gi) in d.chunks_exact_mut(n).zip(g) {
                        if *gi != 0.0 {
                            for (dw, xj) in drow.iter_mut().zip(xv) {
                                *dw += gi * xj;
                            }
                        }
                    }
                });
            }
            Op::Tanh(x) => acc(*x, &mut |d| {
                for k in 0..d.len() {
                    d[k] += g[k] * (1.0 - y[k] * y[k]);
                }
            }),
            Op::Sigmoid(x) => acc(*x, &mut |d| {
                for k in 0..d.len() {
                    d[k] += g[k] * y[k] * (1.0 - y[k]);
                }
            }),
            Op::Softmax(x) => {
                let gy: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                acc(*x, &mut |d| {
                    for k in 0..d.len() {
                        d[k] += y[k] * (g[k] - gy);
                    }
                });
            }
            Op::Log { x, floor } => {
                let xv = self.value(*x);
                acc(*x, &mut |d| {
                    for k in 0..d.len() {
                        if xv[k] > *floor {
                            d[k] += g[k] / xv[k];
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    let seg = &g[off..off + len];
                    acc(*p, &mut |d| add_into(d, seg));
                    off += len;
                }
            }
            Op::Slice { x, start } => {
                acc(*x, &mut |d| add_into(&mut d[*start..*start + g.len()], g));
            }
            Op::Row { table, row } => {
                let cols = g.len();
                acc(*table, &mut |d| add_into(&mut d[row * cols..(row + 1) * cols], g));
            }
            Op::Pick { x, index } => acc(*x, &mut |d| d[*index] += g[0]),
            Op::Sum(x) => acc(*x, &mut |d| d.iter_mut().for_each(|a| *a += g[0])),
            Op::Dot(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                acc(*a, &mut |d| d.iter_mut().zip(vb).for_each(|(x, y)| *x += g[0] * y));
                acc(*b, &mut |d| d.iter_mut().zip(va).for_each(|(x, y)| *x += g[0] * y));
            }
            Op::WeightedSum { weights, items } => {
                let w = self.value(*weights);
                let dw: Vec<f64> = items
                    .iter()
                    .map(|it| self.value(*it).iter().zip(g).map(|(a, b)| a * b).sum())
                    .collect();
                acc(*weights, &mut |d| add_into(d, &dw));
                for (k, it) in items.iter().enumerate() {
                    let wk = w[k];
                    acc(*it, &mut |d| d.iter_mut().zip(g).for_each(|(a, b)| *a += wk * b));
                }
            }
            Op::Stack(parts) => {
                for (k, p) in parts.iter().enumerate() {
                    acc(*p, &mut |d| d[0] += g[k]);
                }
            }
            Op::Dropout { x, mask } => acc(*x, &mut |d| {
                for k in 0..d.len() {
                    d[k] += g[k] * mask[k];
                }
            }),
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}
