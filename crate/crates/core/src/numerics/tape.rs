//! Reverse-mode gradient accumulation over vector-valued nodes.
//!
//! Operations are recorded as they are evaluated. [`Tape::backward`] walks
//! the recording in reverse and adds `scale * d(loss)/d(param)` into a
//! [`Gradients`] buffer. Forward values are produced by the same kernels
//! as the tape-free code paths, so both agree bitwise.

use super::kernels::{dot, log_softmax, matvec, sigmoid};
use super::params::{Gradients, ParamId, ParameterStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(ParamId),
    Row { param: ParamId, row: usize },
    MatVec { param: ParamId, x: NodeId },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    OneMinus(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Scale(NodeId, f64),
    SumElements(NodeId),
    Sum(Vec<NodeId>),
    /// `log softmax(choice · table[rows])[pick]`; keeps the softmax for backward.
    LogSoftmaxPick {
        choice: NodeId,
        table: ParamId,
        rows: Vec<usize>,
        pick: usize,
        probs: Vec<f64>,
    },
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Vec<f64>,
}

/// A recording of operations over one parameter store.
pub struct Tape<'a> {
    store: &'a ParameterStore,
    nodes: Vec<Node>,
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParameterStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &'a ParameterStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, node: NodeId) -> &[f64] {
        &self.nodes[node.0].value
    }

    /// Value of a one-element node.
    pub fn scalar(&self, node: NodeId) -> f64 {
        let v = self.value(node);
        debug_assert_eq!(v.len(), 1);
        v[0]
    }

    /// A constant with no gradient.
    pub fn input(&mut self, value: Vec<f64>) -> NodeId {
        self.push(Op::Input, value)
    }

    /// A whole array, flattened.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        let value = self.store.value(id).to_vec();
        self.push(Op::Param(id), value)
    }

    /// One row of a matrix array.
    pub fn row(&mut self, id: ParamId, row: usize) -> NodeId {
        let value = self.store.param(id).row(row).to_vec();
        self.push(Op::Row { param: id, row }, value)
    }

    pub fn mat_vec(&mut self, id: ParamId, x: NodeId) -> NodeId {
        let p = self.store.param(id);
        let value = matvec(&p.value, p.rows(), p.cols(), self.value(x));
        self.push(Op::MatVec { param: id, x }, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        self.push(Op::Add(a, b), value)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        self.push(Op::Mul(a, b), value)
    }

    pub fn one_minus(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).iter().map(|x| 1.0 - x).collect();
        self.push(Op::OneMinus(a), value)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        self.push(Op::Sigmoid(a), value)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).iter().map(|x| x.tanh()).collect();
        self.push(Op::Tanh(a), value)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.value(a).iter().map(|x| x.max(0.0)).collect();
        self.push(Op::Relu(a), value)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let value = self.value(a).iter().map(|x| s * x).collect();
        self.push(Op::Scale(a, s), value)
    }

    pub fn sum_elements(&mut self, a: NodeId) -> NodeId {
        let value = vec![self.value(a).iter().sum()];
        self.push(Op::SumElements(a), value)
    }

    /// Elementwise sum of equally shaped nodes.
    pub fn sum(&mut self, terms: Vec<NodeId>) -> NodeId {
        let len = terms.first().map_or(1, |&t| self.value(t).len());
        let mut value = vec![0.0; len];
        for &t in &terms {
            for (acc, x) in value.iter_mut().zip(self.value(t)) {
                *acc += x;
            }
        }
        self.push(Op::Sum(terms), value)
    }

    /// Log-probability of `rows[pick]` under a softmax of the logits
    /// `choice · table[row]` restricted to `rows`.
    pub fn log_softmax_pick(&mut self, choice: NodeId, table: ParamId, rows: Vec<usize>, pick: usize) -> Result<NodeId> {
        if rows.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        let p = self.store.param(table);
        let c = self.value(choice);
        let logits: Vec<f64> = rows.iter().map(|&r| dot(c, p.row(r))).collect();
        let logp = log_softmax(&logits);
        let value = vec![logp[pick]];
        let probs = logp.iter().map(|l| l.exp()).collect();
        Ok(self.push(
            Op::LogSoftmaxPick {
                choice,
                table,
                rows,
                pick,
                probs,
            },
            value,
        ))
    }

    /// Adds `scale * d(loss)/d(param)` into `grads` for every array the
    /// loss depends on. Repeated calls accumulate.
    pub fn backward(&self, loss: NodeId, scale: f64, grads: &mut Gradients) -> Result<()> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::Shape(format!("loss has {} elements", lv.len())));
        }
        if !lv[0].is_finite() {
            return Err(Error::NonFiniteLoss(lv[0]));
        }
        let mut adj: Vec<Vec<f64>> = vec![Vec::new(); loss.0 + 1];
        adj[loss.0] = vec![scale];

        fn acc(adj: &mut [Vec<f64>], node: NodeId, len: usize) -> &mut Vec<f64> {
            let slot = &mut adj[node.0];
            if slot.is_empty() {
                slot.resize(len, 0.0);
            }
            slot
        }

        for k in (0..=loss.0).rev() {
            if adj[k].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut adj[k]);
            let node = &self.nodes[k];
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    for (t, x) in grads.get_mut(*id).iter_mut().zip(&g) {
                        *t += x;
                    }
                }
                Op::Row { param, row } => {
                    let cols = self.store.param(*param).cols();
                    let buf = &mut grads.get_mut(*param)[row * cols..(row + 1) * cols];
                    for (t, x) in buf.iter_mut().zip(&g) {
                        *t += x;
                    }
                }
                Op::MatVec { param, x } => {
                    let p = self.store.param(*param);
                    let (rows, cols) = (p.rows(), p.cols());
                    let xv = self.value(*x);
                    let gw = grads.get_mut(*param);
                    for r in 0..rows {
                        for c in 0..cols {
                            gw[r * cols + c] += g[r] * xv[c];
                        }
                    }
                    let gx = acc(&mut adj, *x, cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            gx[c] += p.value[r * cols + c] * g[r];
                        }
                    }
                }
                Op::Add(a, b) => {
                    for t in [*a, *b] {
                        let ga = acc(&mut adj, t, g.len());
                        for (y, x) in ga.iter_mut().zip(&g) {
                            *y += x;
                        }
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).to_vec(), self.value(*b).to_vec());
                    let ga = acc(&mut adj, *a, g.len());
                    for i in 0..g.len() {
                        ga[i] += g[i] * bv[i];
                    }
                    let gb = acc(&mut adj, *b, g.len());
                    for i in 0..g.len() {
                        gb[i] += g[i] * av[i];
                    }
                }
                Op::OneMinus(a) => {
                    let ga = acc(&mut adj, *a, g.len());
                    for (y, x) in ga.iter_mut().zip(&g) {
                        *y -= x;
                    }
                }
                Op::Sigmoid(a) => {
                    let ga = acc(&mut adj, *a, g.len());
                    for i in 0..g.len() {
                        let s = node.value[i];
                        ga[i] += g[i] * s * (1.0 - s);
                    }
                }
                Op::Tanh(a) => {
                    let ga = acc(&mut adj, *a, g.len());
                    for i in 0..g.len() {
                        let t = node.value[i];
                        ga[i] += g[i] * (1.0 - t * t);
                    }
                }
                Op::Relu(a) => {
                    let ga = acc(&mut adj, *a, g.len());
                    for i in 0..g.len() {
                        if node.value[i] > 0.0 {
                            ga[i] += g[i];
                        }
                    }
                }
                Op::Scale(a, s) => {
                    let ga = acc(&mut adj, *a, g.len());
                    for (y, x) in ga.iter_mut().zip(&g) {
                        *y += s * x;
                    }
                }
                Op::SumElements(a) => {
                    let len = self.value(*a).len();
                    let ga = acc(&mut adj, *a, len);
                    for y in ga.iter_mut() {
                        *y += g[0];
                    }
                }
                Op::Sum(terms) => {
                    for &t in terms {
                        let ga = acc(&mut adj, t, g.len());
                        for (y, x) in ga.iter_mut().zip(&g) {
                            *y += x;
                        }
                    }
                }
                Op::LogSoftmaxPick {
                    choice,
                    table,
                    rows,
                    pick,
                    probs,
                } => {
                    // d/dlogit_j = g * (1[j == pick] - p_j)
                    let p = self.store.param(*table);
                    let cols = p.cols();
                    let cv = self.value(*choice).to_vec();
                    let mut gc = vec![0.0; cols];
                    let ge = grads.get_mut(*table);
                    for (j, &r) in rows.iter().enumerate() {
                        let dl = g[0] * (if j == *pick { 1.0 } else { 0.0 } - probs[j]);
                        let e = p.row(r);
                        for c in 0..cols {
                            gc[c] += dl * e[c];
                            ge[r * cols + c] += dl * cv[c];
                        }
                    }
                    let ga = acc(&mut adj, *choice, cols);
                    for (y, x) in ga.iter_mut().zip(&gc) {
                        *y += x;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Accumulates `d(loss)/d(param)` into the store's own accumulators.
pub fn backward(tape: &Tape<'_>, loss: NodeId, grads: &mut Gradients) -> Result<()> {
    tape.backward(loss, 1.0, grads)
}
