//! Append-only computation tape with reverse-mode differentiation.
//!
//! Nodes are recorded in execution order; every input id is strictly smaller
//! than the node's own id, so insertion order is a topological order and the
//! backward pass is a single reverse sweep. Gradients accumulate additively
//! into the `grad` field of `requires_grad` leaves and persist across
//! backward calls until `zero_grads`.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `[m x n] + [1 x n]`, bias replicated over rows.
    AddBias(NodeId, NodeId),
    Exp(NodeId),
    Log(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Neg(NodeId),
    Sigmoid(NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    Clamp(NodeId, f64, f64),
    SoftmaxRows(NodeId),
    /// Identity forward; backward multiplies the upstream gradient by -lambda.
    GradReverse(NodeId, f64),
    SumAll(NodeId),
    MeanAll(NodeId),
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        match *self {
            Op::Leaf => vec![],
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddBias(a, b) => vec![a, b],
            Op::Exp(a)
            | Op::Log(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Neg(a)
            | Op::Sigmoid(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Clamp(a, _, _)
            | Op::SoftmaxRows(a)
            | Op::GradReverse(a, _)
            | Op::SumAll(a)
            | Op::MeanAll(a) => vec![a],
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Reverse-mode differentiation tape over [`Tensor`] values.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// `C[m x n] = A[m x k] . B[k x n]`
pub fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for j in 0..n {
                c_row[j] += av * b_row[j];
            }
        }
    }
    c
}

/// `out[m x k] += D[m x n] . B^T` where B is `[k x n]`.
fn matmul_nt_acc(out: &mut [f64], d: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let d_row = &d[i * n..(i + 1) * n];
        let o_row = &mut out[i * k..(i + 1) * k];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let mut s = 0.0;
            for j in 0..n {
                s += d_row[j] * b_row[j];
            }
            o_row[p] += s;
        }
    }
}

/// `out[k x n] += A^T . D` where A is `[m x k]`, D is `[m x n]`.
fn matmul_tn_acc(out: &mut [f64], a: &[f64], d: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let d_row = &d[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let o_row = &mut out[p * n..(p + 1) * n];
            for j in 0..n {
                o_row[j] += av * d_row[j];
            }
        }
    }
}

enum Operand {
    SameShape,
    LhsScalar,
    RhsScalar,
}

fn binary_layout(op: &'static str, lhs: &Tensor, rhs: &Tensor) -> Result<Operand> {
    if lhs.shape() == rhs.shape() {
        Ok(Operand::SameShape)
    } else if lhs.is_scalar() {
        Ok(Operand::LhsScalar)
    } else if rhs.is_scalar() {
        Ok(Operand::RhsScalar)
    } else {
        Err(Error::ShapeMismatch {
            op,
            lhs: lhs.shape().to_vec(),
            rhs: rhs.shape().to_vec(),
        })
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Accumulated gradient of a leaf, if backward has reached it.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].value.grad.as_deref()
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.value.grad = None;
        }
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        // Acyclicity: inputs must already be on the tape.
        for input in op.inputs() {
            assert!(input.0 < id.0, "graph input {} >= node id {}", input.0, id.0);
        }
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        id
    }

    /// Insert a tensor as a leaf; `requires_grad` comes from the tensor.
    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        let rg = t.requires_grad;
        self.push(Op::Leaf, t, rg)
    }

    /// Insert a tensor as a non-differentiable constant.
    pub fn constant(&mut self, mut t: Tensor) -> NodeId {
        t.requires_grad = false;
        self.push(Op::Leaf, t, false)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let data = matmul_raw(ta.data(), tb.data(), m, k, n);
        let out = Tensor::new(vec![m, n], data)?;
        Ok(self.push(Op::MatMul(a, b), out, self.rg(a) || self.rg(b)))
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        let layout = binary_layout(name, ta, tb)?;
        let data: Vec<f64> = match layout {
            Operand::SameShape => ta
                .data()
                .iter()
                .zip(tb.data())
                .map(|(&x, &y)| f(x, y))
                .collect(),
            Operand::LhsScalar => {
                let s = ta.item();
                tb.data().iter().map(|&y| f(s, y)).collect()
            }
            Operand::RhsScalar => {
                let s = tb.item();
                ta.data().iter().map(|&x| f(x, s)).collect()
            }
        };
        let shape = match layout {
            Operand::LhsScalar => tb.shape().to_vec(),
            _ => ta.shape().to_vec(),
        };
        let out = Tensor::new(shape, data)?;
        Ok(self.push(op, out, self.rg(a) || self.rg(b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `[m x n] + [1 x n]` with the bias row added to every row.
    pub fn add_bias(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ok = ta.shape().len() == 2
            && tb.shape().len() == 2
            && tb.shape()[0] == 1
            && tb.shape()[1] == ta.shape()[1];
        if !ok {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, n) = (ta.shape()[0], ta.shape()[1]);
        let mut data = ta.data().to_vec();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += tb.data()[j];
            }
        }
        let out = Tensor::new(vec![m, n], data)?;
        Ok(self.push(Op::AddBias(a, b), out, self.rg(a) || self.rg(b)))
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let data: Vec<f64> = self.value(a).data().iter().map(|&x| f(x)).collect();
        let out = Tensor::new(self.value(a).shape().to_vec(), data).expect("shape preserved");
        self.push(op, out, self.rg(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    /// Natural log; every entry must be strictly positive.
    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        if let Some(&bad) = self.value(a).data().iter().find(|v| **v <= 0.0) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive entry {bad}"),
            });
        }
        Ok(self.unary(a, f64::ln, Op::Log(a)))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(a))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, |x| c * x, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, |x| x + c, Op::AddScalar(a))
    }

    /// Elementwise clamp to `[lo, hi]`; gradient passes inside the
    /// (inclusive) range and is zero outside.
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        assert!(lo <= hi, "clamp bounds inverted");
        self.unary(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    /// Row-wise softmax with max-subtraction for stability.
    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let ta = self.value(a);
        if ta.shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op: "softmax_rows",
                lhs: ta.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (m, n) = (ta.shape()[0], ta.shape()[1]);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let row = ta.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..n {
                let e = (row[j] - max).exp();
                data[i * n + j] = e;
                sum += e;
            }
            for j in 0..n {
                data[i * n + j] /= sum;
            }
        }
        let out = Tensor::new(vec![m, n], data)?;
        Ok(self.push(Op::SoftmaxRows(a), out, self.rg(a)))
    }

    /// Forward identity; backward multiplies the incoming gradient by
    /// `-lambda` before propagating.
    pub fn gradient_reversal(&mut self, a: NodeId, lambda: f64) -> Result<NodeId> {
        if !(lambda >= 0.0) {
            return Err(Error::contract(format!(
                "gradient_reversal lambda must be non-negative, got {lambda}"
            )));
        }
        Ok(self.unary(a, |x| x, Op::GradReverse(a, lambda)))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Op::SumAll(a), Tensor::scalar(s), self.rg(a))
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let t = self.value(a);
        let s: f64 = t.data().iter().sum();
        let mean = s / t.numel() as f64;
        self.push(Op::MeanAll(a), Tensor::scalar(mean), self.rg(a))
    }

    /// Reverse sweep from a scalar root. Leaf gradients accumulate
    /// additively across calls; intermediate adjoints are per-call.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if !self.nodes[root.0].value.is_scalar() {
            return Err(Error::contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.nodes[root.0].value.shape()
            )));
        }
        let mut adjoint: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adjoint[root.0] = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(dy) = adjoint[idx].take() else {
                continue;
            };
            self.propagate(idx, &dy, &mut adjoint);
            if matches!(self.nodes[idx].op, Op::Leaf) {
                let value = &mut self.nodes[idx].value;
                let grad = value
                    .grad
                    .get_or_insert_with(|| vec![0.0; dy.len()]);
                for (g, d) in grad.iter_mut().zip(&dy) {
                    *g += d;
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, dy: &[f64], adjoint: &mut [Option<Vec<f64>>]) {
        let acc = |adjoint: &mut [Option<Vec<f64>>], id: NodeId, numel: usize| -> bool {
            if !self.nodes[id.0].requires_grad {
                return false;
            }
            if adjoint[id.0].is_none() {
                adjoint[id.0] = Some(vec![0.0; numel]);
            }
            true
        };
        let op = self.nodes[idx].op.clone();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ta = self.value(a);
                let tb = self.value(b);
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if acc(adjoint, a, m * k) {
                    let buf = adjoint[a.0].as_mut().unwrap();
                    matmul_nt_acc(buf, dy, self.nodes[b.0].value.data(), m, k, n);
                }
                if acc(adjoint, b, k * n) {
                    let buf = adjoint[b.0].as_mut().unwrap();
                    matmul_tn_acc(buf, self.nodes[a.0].value.data(), dy, m, k, n);
                }
            }
            Op::Add(a, b) => {
                self.binary_backward(a, b, dy, adjoint, |_, _, d| (d, d));
            }
            Op::Sub(a, b) => {
                self.binary_backward(a, b, dy, adjoint, |_, _, d| (d, -d));
            }
            Op::Mul(a, b) => {
                self.binary_backward(a, b, dy, adjoint, |x, y, d| (d * y, d * x));
            }
            Op::AddBias(a, b) => {
                let n = self.value(b).numel();
                if acc(adjoint, a, dy.len()) {
                    let buf = adjoint[a.0].as_mut().unwrap();
                    for (g, d) in buf.iter_mut().zip(dy) {
                        *g += d;
                    }
                }
                if acc(adjoint, b, n) {
                    let buf = adjoint[b.0].as_mut().unwrap();
                    for (i, d) in dy.iter().enumerate() {
                        buf[i % n] += d;
                    }
                }
            }
            Op::Exp(a) => {
                let out = self.nodes[idx].value.data();
                self.unary_backward(a, dy, adjoint, |i, d| d * out[i]);
            }
            Op::Log(a) => {
                let x = self.value(a).data();
                self.unary_backward(a, dy, adjoint, |i, d| d / x[i]);
            }
            Op::Tanh(a) => {
                let out = self.nodes[idx].value.data();
                self.unary_backward(a, dy, adjoint, |i, d| d * (1.0 - out[i] * out[i]));
            }
            Op::Relu(a) => {
                let x = self.value(a).data();
                self.unary_backward(a, dy, adjoint, |i, d| if x[i] > 0.0 { d } else { 0.0 });
            }
            Op::Neg(a) => {
                self.unary_backward(a, dy, adjoint, |_, d| -d);
            }
            Op::Sigmoid(a) => {
                let out = self.nodes[idx].value.data();
                self.unary_backward(a, dy, adjoint, |i, d| d * out[i] * (1.0 - out[i]));
            }
            Op::Scale(a, c) => {
                self.unary_backward(a, dy, adjoint, |_, d| c * d);
            }
            Op::AddScalar(a) => {
                self.unary_backward(a, dy, adjoint, |_, d| d);
            }
            Op::Clamp(a, lo, hi) => {
                let x = self.value(a).data();
                self.unary_backward(a, dy, adjoint, |i, d| {
                    if x[i] >= lo && x[i] <= hi {
                        d
                    } else {
                        0.0
                    }
                });
            }
            Op::SoftmaxRows(a) => {
                let p = self.nodes[idx].value.data();
                let (m, n) = (
                    self.nodes[idx].value.shape()[0],
                    self.nodes[idx].value.shape()[1],
                );
                if acc(adjoint, a, m * n) {
                    let buf = adjoint[a.0].as_mut().unwrap();
                    for i in 0..m {
                        let pr = &p[i * n..(i + 1) * n];
                        let dr = &dy[i * n..(i + 1) * n];
                        let dot: f64 = pr.iter().zip(dr).map(|(&pv, &dv)| pv * dv).sum();
                        for j in 0..n {
                            buf[i * n + j] += pr[j] * (dr[j] - dot);
                        }
                    }
                }
            }
            Op::GradReverse(a, lambda) => {
                self.unary_backward(a, dy, adjoint, |_, d| -lambda * d);
            }
            Op::SumAll(a) => {
                let numel = self.value(a).numel();
                if acc(adjoint, a, numel) {
                    let buf = adjoint[a.0].as_mut().unwrap();
                    for g in buf.iter_mut() {
                        *g += dy[0];
                    }
                }
            }
            Op::MeanAll(a) => {
                let numel = self.value(a).numel();
                let d = dy[0] / numel as f64;
                if acc(adjoint, a, numel) {
                    let buf = adjoint[a.0].as_mut().unwrap();
                    for g in buf.iter_mut() {
                        *g += d;
                    }
                }
            }
        }
    }

    fn unary_backward(
        &self,
        a: NodeId,
        dy: &[f64],
        adjoint: &mut [Option<Vec<f64>>],
        df: impl Fn(usize, f64) -> f64,
    ) {
        if !self.nodes[a.0].requires_grad {
            return;
        }
        if adjoint[a.0].is_none() {
            adjoint[a.0] = Some(vec![0.0; dy.len()]);
        }
        let buf = adjoint[a.0].as_mut().unwrap();
        for (i, &d) in dy.iter().enumerate() {
            buf[i] += df(i, d);
        }
    }

    /// Shared accumulation for elementwise binary ops; `df` maps
    /// (lhs value, rhs value, upstream) to (lhs contribution, rhs contribution).
    fn binary_backward(
        &self,
        a: NodeId,
        b: NodeId,
        dy: &[f64],
        adjoint: &mut [Option<Vec<f64>>],
        df: impl Fn(f64, f64, f64) -> (f64, f64),
    ) {
        let ta = self.value(a);
        let tb = self.value(b);
        let (na, nb) = (ta.numel(), tb.numel());
        let want_a = self.nodes[a.0].requires_grad;
        let want_b = self.nodes[b.0].requires_grad;
        if want_a && adjoint[a.0].is_none() {
            adjoint[a.0] = Some(vec![0.0; na]);
        }
        if want_b && adjoint[b.0].is_none() {
            adjoint[b.0] = Some(vec![0.0; nb]);
        }
        for (i, &d) in dy.iter().enumerate() {
            let x = ta.data()[if na == 1 { 0 } else { i }];
            let y = tb.data()[if nb == 1 { 0 } else { i }];
            let (da, db) = df(x, y, d);
            if want_a {
                adjoint[a.0].as_mut().unwrap()[if na == 1 { 0 } else { i }] += da;
            }
            if want_b {
                adjoint[b.0].as_mut().unwrap()[if nb == 1 { 0 } else { i }] += db;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(g: &mut Graph, rows: &[Vec<f64>]) -> NodeId {
        g.leaf(Tensor::from_rows(rows).unwrap().with_grad())
    }

    #[test]
    fn matmul_identity() {
        let mut g = Graph::new();
        let i2 = g.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let a = g.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let c = g.matmul(i2, a).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_row_times_column() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let b = g.constant(Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap());
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).shape(), &[1, 1]);
        assert_eq!(g.value(c).item(), 11.0);
    }

    #[test]
    fn matmul_zeros_annihilate() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::zeros(vec![2, 3]));
        let a = g.constant(Tensor::full(vec![3, 2], 7.5));
        let c = g.matmul(z, a).unwrap();
        assert!(g.value(c).data().iter().all(|&v| v == 0.0));
        assert_eq!(g.value(c).shape(), &[2, 2]);
    }

    #[test]
    fn matmul_against_brute_force_oracle() {
        let mut rng = crate::rng::RngStream::new(11);
        for _ in 0..10 {
            let (m, k, n) = (
                1 + rng.pick(5),
                1 + rng.pick(5),
                1 + rng.pick(5),
            );
            let a: Vec<f64> = (0..m * k).map(|_| rng.next_normal()).collect();
            let b: Vec<f64> = (0..k * n).map(|_| rng.next_normal()).collect();
            // Independent brute-force triple loop in the naive j-inner order.
            let mut expect = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    let mut s = 0.0;
                    for p in 0..k {
                        s += a[i * k + p] * b[p * n + j];
                    }
                    expect[i * n + j] = s;
                }
            }
            let mut g = Graph::new();
            let na = g.constant(Tensor::new(vec![m, k], a).unwrap());
            let nb = g.constant(Tensor::new(vec![k, n], b).unwrap());
            let c = g.matmul(na, nb).unwrap();
            for (got, want) in g.value(c).data().iter().zip(&expect) {
                assert!((got - want).abs() < 1e-12, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![2, 3]));
        let b = g.constant(Tensor::zeros(vec![2, 3]));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.matches("[2, 3]").count() == 2, "{err}");
    }

    #[test]
    fn elementwise_basics() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::scalar(0.0));
        let e = g.exp(x);
        assert_eq!(g.value(e).item(), 1.0);

        let x = g.constant(Tensor::scalar(0.37));
        let ex = g.exp(x);
        let back = g.log(ex).unwrap();
        assert!((g.value(back).item() - 0.37).abs() < 1e-15);

        let x = g.constant(Tensor::from_rows(&[vec![-2.5, 2.5]]).unwrap());
        let r = g.relu(x);
        assert_eq!(g.value(r).data(), &[0.0, 2.5]);
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[vec![1.0, -1.0]]).unwrap());
        match g.log(x) {
            Err(Error::Domain { op: "log", .. }) => {}
            other => panic!("expected domain error, got {other:?}"),
        }
    }

    #[test]
    fn elementwise_shape_mismatch() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![2, 2]));
        let b = g.constant(Tensor::zeros(vec![2, 3]));
        assert!(matches!(
            g.add(a, b),
            Err(Error::ShapeMismatch { op: "add", .. })
        ));
    }

    #[test]
    fn scalar_broadcast_both_sides() {
        let mut g = Graph::new();
        let t = g.constant(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let s = g.constant(Tensor::scalar(10.0));
        let a = g.add(t, s).unwrap();
        assert_eq!(g.value(a).data(), &[11.0, 12.0]);
        let b = g.sub(s, t).unwrap();
        assert_eq!(g.value(b).data(), &[9.0, 8.0]);
    }

    #[test]
    fn softmax_uniform_and_closed_form() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[vec![0.0, 0.0, 0.0]]).unwrap());
        let p = g.softmax_rows(x).unwrap();
        for &v in g.value(p).data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }

        let x = g.constant(Tensor::from_rows(&[vec![9f64.ln(), 0.0]]).unwrap());
        let p = g.softmax_rows(x).unwrap();
        assert!((g.value(p).data()[0] - 0.9).abs() < 1e-12);
        assert!((g.value(p).data()[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_rows(&[vec![0.3, -1.2, 2.0]]).unwrap());
        let y = g.constant(Tensor::from_rows(&[vec![0.3 + 55.5, -1.2 + 55.5, 2.0 + 55.5]]).unwrap());
        let px = g.softmax_rows(x).unwrap();
        let py = g.softmax_rows(y).unwrap();
        for (a, b) in g.value(px).data().iter().zip(g.value(py).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn grl_forward_is_bit_identical() {
        let mut g = Graph::new();
        let data = vec![1.5, -2.25, 0.0, 1e-300];
        let x = g.constant(Tensor::new(vec![1, 4], data.clone()).unwrap());
        let y = g.gradient_reversal(x, 0.7).unwrap();
        for (a, b) in g.value(y).data().iter().zip(&data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn grl_scales_and_negates_gradient() {
        // f(grl(x)) with f = 3x: d/dx must be -3*lambda (manual chain rule).
        let lambda = 0.7;
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(1.2).with_grad());
        let r = g.gradient_reversal(x, lambda).unwrap();
        let f = g.scale(r, 3.0);
        g.backward(f).unwrap();
        let got = g.grad(x).unwrap()[0];
        assert!((got - (-3.0 * lambda)).abs() < 1e-15, "{got}");
    }

    #[test]
    fn grl_lambda_zero_annihilates() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(1.2).with_grad());
        let r = g.gradient_reversal(x, 0.0).unwrap();
        let f = g.scale(r, 3.0);
        g.backward(f).unwrap();
        assert_eq!(g.grad(x).unwrap()[0], 0.0);
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(vec![3, 2]).with_grad());
        let s = g.sum_all(x);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn backward_quadratic_hand_chain_rule() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![1, 2], vec![1.0, -2.0]).unwrap().with_grad());
        let sq = g.mul(x, x).unwrap();
        let s = g.sum_all(sq);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, -4.0]);
    }

    #[test]
    fn backward_twice_doubles() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![1, 2], vec![1.0, -2.0]).unwrap().with_grad());
        let sq = g.mul(x, x).unwrap();
        let s = g.sum_all(sq);
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[4.0, -8.0]);
        g.zero_grads();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, -4.0]);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(vec![2, 2]).with_grad());
        assert!(matches!(g.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn fanout_accumulates() {
        // s = sum(x + x) => grad = 2 per entry.
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(vec![2, 2]).with_grad());
        let two = g.add(x, x).unwrap();
        let s = g.sum_all(two);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0; 4]);
    }
}
