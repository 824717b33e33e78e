//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every operation whose operands participate in
//! gradient computation. Values are computed eagerly during the forward
//! pass; [`Tape::backward`] walks the recorded entries in reverse order and
//! accumulates vector-Jacobian products into per-node gradient buffers.
//!
//! Shapes are never broadcast. Every operation checks its operand shapes
//! explicitly and reports the op name and both shapes on mismatch.
//!
//! A tape supports exactly one backward pass. Build a fresh tape for every
//! forward evaluation.

use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    /// Parameter, constant, or any result that does not need a gradient.
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Relu(Var),
    Tanh(Var),
    Mean(Var),
    Sum(Var),
    L2Norm(Var),
    Distance(Var, Var),
    Cosine(Var, Var),
    Softmax(Var),
    Log { input: Var, floor: f64 },
    Concat(Vec<Var>),
    Slice { input: Var, offset: usize },
    Reshape(Var),
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum State {
    Recording,
    Consumed,
}

/// Ordered record of a forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    state: State,
    kink_gap: f64,
    relu_signature: u64,
    clamp_events: usize,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &a[i * k..(i + 1) * k];
        let dst = &mut out[i * n..(i + 1) * n];
        for (p, &av) in row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (d, &bv) in dst.iter_mut().zip(brow) {
                *d += av * bv;
            }
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn accumulate(grads: &mut [Option<Vec<f64>>], idx: usize, contribution: Vec<f64>) {
    match &mut grads[idx] {
        Some(buf) => buf.iter_mut().zip(&contribution).for_each(|(b, c)| *b += c),
        slot @ None => *slot = Some(contribution),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            state: State::Recording,
            kink_gap: f64::INFINITY,
            relu_signature: FNV_OFFSET,
            clamp_events: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Smallest distance from a non-differentiable point seen so far: the
    /// minimum over every relu input magnitude and every norm/distance value.
    pub fn kink_gap(&self) -> f64 {
        self.kink_gap
    }

    /// Hash of all relu activation patterns, in recording order.
    pub fn relu_signature(&self) -> u64 {
        self.relu_signature
    }

    /// Number of log evaluations whose input was clamped at its floor.
    pub fn clamp_events(&self) -> usize {
        self.clamp_events
    }

    /// Records the number of nodes that carry a backward rule.
    pub fn recorded_ops(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| !matches!(n.op, Op::Leaf))
            .count()
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    /// Value of a single-element node.
    pub fn item(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).requires_grad
    }

    fn push(
        &mut self,
        op_name: &'static str,
        shape: Vec<usize>,
        value: Vec<f64>,
        op: Op,
        operands: &[Var],
    ) -> Result<Var> {
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = operands.iter().any(|&v| self.node(v).requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            shape,
            value,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf(&mut self, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool) -> Result<Var> {
        if numel(&shape) != value.len() {
            return Err(Error::Shape {
                op: "leaf",
                lhs: shape,
                rhs: vec![value.len()],
            });
        }
        if value.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "leaf" });
        }
        self.nodes.push(Node {
            shape,
            value,
            requires_grad,
            op: Op::Leaf,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Loads a tensor as a leaf. Gradients are tracked iff `t.requires_grad`.
    pub fn param(&mut self, t: &Tensor) -> Var {
        self.leaf(t.shape().to_vec(), t.data().to_vec(), t.requires_grad)
            .expect("tensor invariants guarantee a valid leaf")
    }

    pub fn constant(&mut self, shape: Vec<usize>, value: Vec<f64>) -> Result<Var> {
        self.leaf(shape, value, false)
    }

    pub fn constant_vector(&mut self, value: &[f64]) -> Result<Var> {
        self.leaf(vec![value.len()], value.to_vec(), false)
    }

    pub fn constant_scalar(&mut self, value: f64) -> Result<Var> {
        self.leaf(Vec::new(), vec![value], false)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn zip_map(&mut self, op: &'static str, a: Var, b: Var, kind: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let value = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(op, shape, value, kind, &[a, b])
    }

    fn map(&mut self, op: &'static str, a: Var, kind: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let value = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(op, shape, value, kind, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_map("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        if !s.is_finite() {
            return Err(Error::NonFinite { op: "scale" });
        }
        self.map("scale", a, Op::Scale(a, s), |x| x * s)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        if !c.is_finite() {
            return Err(Error::NonFinite { op: "add_scalar" });
        }
        self.map("add_scalar", a, Op::AddScalar(a), |x| x + c)
    }

    /// `[m,k] x [k,n] -> [m,n]` or `[m,k] x [k] -> [m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let err = || Error::Shape {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() != 2 {
            return Err(err());
        }
        let (m, k) = (sa[0], sa[1]);
        let (n, out_shape) = match sb.as_slice() {
            [kb] if *kb == k => (1, vec![m]),
            [kb, n] if *kb == k => (*n, vec![m, *n]),
            _ => return Err(err()),
        };
        let value = matmul_raw(self.value(a), self.value(b), m, k, n);
        self.push("matmul", out_shape, value, Op::MatMul(a, b), &[a, b])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let mut sig = self.relu_signature;
        let mut gap = self.kink_gap;
        for &x in self.value(a) {
            gap = gap.min(x.abs());
            sig = (sig ^ u64::from(x > 0.0)).wrapping_mul(FNV_PRIME);
        }
        self.relu_signature = sig;
        self.kink_gap = gap;
        self.map("relu", a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map("tanh", a, Op::Tanh(a), f64::tanh)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        self.push("mean", Vec::new(), vec![m], Op::Mean(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().sum::<f64>();
        self.push("sum", Vec::new(), vec![s], Op::Sum(a), &[a])
    }

    pub fn l2_norm(&mut self, a: Var) -> Result<Var> {
        let n = norm(self.value(a));
        self.kink_gap = self.kink_gap.min(n);
        self.push("l2_norm", Vec::new(), vec![n], Op::L2Norm(a), &[a])
    }

    pub fn euclidean_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("euclidean_distance", a, b)?;
        let d = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        self.kink_gap = self.kink_gap.min(d);
        self.push("euclidean_distance", Vec::new(), vec![d], Op::Distance(a, b), &[a, b])
    }

    /// Cosine similarity of two equally shaped, nonzero operands.
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("cosine_similarity", a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let (na, nb) = (norm(va), norm(vb));
        if na == 0.0 || nb == 0.0 {
            return Err(Error::Numeric {
                op: "cosine_similarity",
                msg: "zero-norm operand".into(),
            });
        }
        let s = (dot(va, vb) / (na * nb)).clamp(-1.0, 1.0);
        self.push("cosine_similarity", Vec::new(), vec![s], Op::Cosine(a, b), &[a, b])
    }

    /// Softmax over a 1-D operand.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        if self.shape(a).len() != 1 {
            return Err(Error::Shape {
                op: "softmax",
                lhs: self.shape(a).to_vec(),
                rhs: vec![],
            });
        }
        let v = self.value(a);
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        let value = exps.into_iter().map(|e| e / z).collect();
        let shape = self.shape(a).to_vec();
        self.push("softmax", shape, value, Op::Softmax(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.map("log", a, Op::Log { input: a, floor: 0.0 }, f64::ln)
    }

    /// `ln(max(x, floor))`; clamped entries get zero gradient.
    pub fn log_clamped(&mut self, a: Var, floor: f64) -> Result<Var> {
        let clamped = self.value(a).iter().filter(|&&x| x < floor).count();
        self.clamp_events += clamped;
        self.map("log", a, Op::Log { input: a, floor }, |x| x.max(floor).ln())
    }

    /// Concatenates along the leading axis. Scalars count as length-1 vectors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| {
            Error::InvalidArgument("concat: empty operand list".into())
        })?;
        let trailing = |s: &[usize]| -> Vec<usize> {
            if s.is_empty() {
                Vec::new()
            } else {
                s[1..].to_vec()
            }
        };
        let lead = |s: &[usize]| s.first().copied().unwrap_or(1);
        let tail = trailing(self.shape(first));
        let mut rows = 0;
        let mut value = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if trailing(s) != tail {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: self.shape(first).to_vec(),
                    rhs: s.to_vec(),
                });
            }
            rows += lead(s);
            value.extend_from_slice(self.value(p));
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        self.push("concat", shape, value, Op::Concat(parts.to_vec()), parts)
    }

    /// Rows `start..end` along the leading axis.
    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.is_empty() || start >= end || end > s[0] {
            return Err(Error::Shape {
                op: "slice",
                lhs: s,
                rhs: vec![start, end],
            });
        }
        let row = numel(&s[1..]);
        let value = self.value(a)[start * row..end * row].to_vec();
        let mut shape = vec![end - start];
        shape.extend_from_slice(&s[1..]);
        self.push(
            "slice",
            shape,
            value,
            Op::Slice {
                input: a,
                offset: start * row,
            },
            &[a],
        )
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        if numel(&shape) != self.value(a).len() || shape.contains(&0) {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape(a).to_vec(),
                rhs: shape,
            });
        }
        let value = self.value(a).to_vec();
        self.push("reshape", shape, value, Op::Reshape(a), &[a])
    }

    /// Propagates d(loss)/d(node) to every node that requires a gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.state == State::Consumed {
            return Err(Error::StaleTape);
        }
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        if self.node(loss).value.len() != 1 {
            return Err(Error::NonScalarLoss(self.node(loss).shape.clone()));
        }
        self.state = State::Consumed;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if !self.node(loss).requires_grad {
            self.grads = grads;
            return Ok(());
        }
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { op: "backward" });
            }
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut send = |v: Var, c: Vec<f64>| {
            if wants(v) {
                accumulate(grads, v.0, c);
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                send(*a, g.iter().zip(vb).map(|(g, y)| g * y).collect());
                send(*b, g.iter().zip(va).map(|(g, x)| g * x).collect());
            }
            Op::Scale(a, s) => send(*a, g.iter().map(|x| x * s).collect()),
            Op::AddScalar(a) => send(*a, g.to_vec()),
            Op::MatMul(a, b) => {
                let sa = self.shape(*a);
                let (m, k) = (sa[0], sa[1]);
                let n = self.shape(*b).get(1).copied().unwrap_or(1);
                let (va, vb) = (self.value(*a), self.value(*b));
                if wants(*a) {
                    // dA = G · Bᵀ
                    let mut ga = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            ga[i * k + p] = dot(&g[i * n..(i + 1) * n], &vb[p * n..(p + 1) * n]);
                        }
                    }
                    send(*a, ga);
                }
                if wants(*b) {
                    // dB = Aᵀ · G
                    let mut gb = vec![0.0; k * n];
                    for i in 0..m {
                        for p in 0..k {
                            let av = va[i * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                gb[p * n + j] += av * g[i * n + j];
                            }
                        }
                    }
                    send(*b, gb);
                }
            }
            Op::Relu(a) => {
                let va = self.value(*a);
                send(
                    *a,
                    g.iter()
                        .zip(va)
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect(),
                );
            }
            Op::Tanh(a) => {
                let y = &node.value;
                send(*a, g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect());
            }
            Op::Mean(a) => {
                let n = self.value(*a).len();
                send(*a, vec![g[0] / n as f64; n]);
            }
            Op::Sum(a) => {
                let n = self.value(*a).len();
                send(*a, vec![g[0]; n]);
            }
            Op::L2Norm(a) => {
                let n = node.value[0];
                let va = self.value(*a);
                if n > 0.0 {
                    send(*a, va.iter().map(|x| g[0] * x / n).collect());
                } else {
                    send(*a, vec![0.0; va.len()]);
                }
            }
            Op::Distance(a, b) => {
                let d = node.value[0];
                let diff: Vec<f64> = self
                    .value(*a)
                    .iter()
                    .zip(self.value(*b))
                    .map(|(x, y)| if d > 0.0 { g[0] * (x - y) / d } else { 0.0 })
                    .collect();
                send(*b, diff.iter().map(|x| -x).collect());
                send(*a, diff);
            }
            Op::Cosine(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (na, nb) = (norm(va), norm(vb));
                let s = dot(va, vb) / (na * nb);
                let ga = va
                    .iter()
                    .zip(vb)
                    .map(|(x, y)| g[0] * (y / (na * nb) - s * x / (na * na)))
                    .collect();
                let gb = va
                    .iter()
                    .zip(vb)
                    .map(|(x, y)| g[0] * (x / (na * nb) - s * y / (nb * nb)))
                    .collect();
                send(*a, ga);
                send(*b, gb);
            }
            Op::Softmax(a) => {
                let y = &node.value;
                let gy = dot(g, y);
                send(*a, y.iter().zip(g).map(|(y, g)| y * (g - gy)).collect());
            }
            Op::Log { input, floor } => {
                let va = self.value(*input);
                send(
                    *input,
                    g.iter()
                        .zip(va)
                        .map(|(g, &x)| if x < *floor { 0.0 } else { g / x })
                        .collect(),
                );
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    send(p, g[offset..offset + len].to_vec());
                    offset += len;
                }
            }
            Op::Slice { input, offset } => {
                let mut full = vec![0.0; self.value(*input).len()];
                full[*offset..*offset + g.len()].copy_from_slice(g);
                send(*input, full);
            }
            Op::Reshape(a) => send(*a, g.to_vec()),
        }
    }

    /// Gradient of the last backward loss w.r.t. `v`, if `v` was reached.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, or zeros when `v` requires grad but was not reached.
    pub fn grad_or_zeros(&self, v: Var) -> Result<Vec<f64>> {
        if self.state != State::Consumed {
            return Err(Error::InvalidArgument(
                "gradients requested before backward".into(),
            ));
        }
        Ok(self
            .grad(v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; self.value(v).len()]))
    }

    /// Adds the gradient of `v` into the tensor's gradient buffer.
    pub fn accumulate_into(&self, v: Var, t: &mut Tensor) -> Result<()> {
        if self.shape(v) != t.shape() {
            return Err(Error::Shape {
                op: "accumulate_into",
                lhs: self.shape(v).to_vec(),
                rhs: t.shape().to_vec(),
            });
        }
        t.accumulate_grad(&self.grad_or_zeros(v)?)
    }
}
