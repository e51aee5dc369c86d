use std::cell::{Cell, RefCell};
use std::fmt;

use super::eig::{sym_eig_min_backward, sym_eig_min_forward};
use super::kernels::{axis_split, broadcast_shape, gemm, permute_table, BroadcastMap};
use super::{numel, Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Unary {
    Neg,
    Relu,
    Sigmoid,
    Tanh,
    Exp,
    Ln,
    Sqrt,
    Square,
    Softplus,
    Scale(f64),
    AddScalar(f64),
    Clamp(f64, f64),
}

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Neg => -x,
            Unary::Relu => x.max(0.0),
            Unary::Sigmoid => sigmoid(x),
            Unary::Tanh => x.tanh(),
            Unary::Exp => x.exp(),
            Unary::Ln => x.ln(),
            Unary::Sqrt => x.sqrt(),
            Unary::Square => x * x,
            Unary::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
            Unary::Scale(c) => c * x,
            Unary::AddScalar(c) => x + c,
            Unary::Clamp(lo, hi) => x.clamp(lo, hi),
        }
    }

    /// d(out)/d(in) given input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Neg => -1.0,
            Unary::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Tanh => 1.0 - y * y,
            Unary::Exp => y,
            Unary::Ln => 1.0 / x,
            Unary::Sqrt => 0.5 / y,
            Unary::Square => 2.0 * x,
            Unary::Softplus => sigmoid(x),
            Unary::Scale(c) => c,
            Unary::AddScalar(_) => 1.0,
            Unary::Clamp(lo, hi) => {
                if x >= lo && x <= hi {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Unary {
        x: usize,
        kind: Unary,
    },
    Binary {
        a: usize,
        b: usize,
        kind: Binary,
        map_a: BroadcastMap,
        map_b: BroadcastMap,
    },
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
        map_a: BroadcastMap,
        map_b: BroadcastMap,
        batches: usize,
    },
    Sum {
        x: usize,
        axis: usize,
    },
    Max {
        x: usize,
        axis: usize,
        argmax: Vec<usize>,
    },
    Softmax {
        x: usize,
        axis: usize,
    },
    Reshape {
        x: usize,
    },
    Permute {
        x: usize,
        table: Vec<usize>,
    },
    Narrow {
        x: usize,
        axis: usize,
        start: usize,
    },
    Concat {
        inputs: Vec<usize>,
        axis: usize,
    },
    Gather {
        x: usize,
        indices: Vec<usize>,
    },
    SymEigMin {
        x: usize,
        eigenvalues: Vec<f64>,
        eigenvectors: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only computation record. Node ids are assigned in creation order,
/// so every node's inputs precede it and the id order is a topological order.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    track_signature: bool,
    signature: Cell<u64>,
    degenerate: Cell<bool>,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("nodes", &self.nodes.borrow().len())
            .finish()
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    sizes: Vec<usize>,
    requires: Vec<bool>,
}

impl Gradients {
    /// Gradient of `var`; `None` when it does not require grad. Nodes that the
    /// loss never reached report zeros.
    pub fn get(&self, var: Var<'_>) -> Option<Vec<f64>> {
        self.get_id(var.id)
    }

    pub(crate) fn get_id(&self, id: usize) -> Option<Vec<f64>> {
        if !self.requires[id] {
            return None;
        }
        Some(
            self.grads[id]
                .clone()
                .unwrap_or_else(|| vec![0.0; self.sizes[id]]),
        )
    }
}

const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Relative gap below which the two smallest eigenvalues count as repeated.
const REPEATED_EIGENVALUE: f64 = 1e-10;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph that also fingerprints every branch decision (ReLU masks, clamp
    /// masks, max positions, gathered indices). Two evaluations with equal
    /// signatures ran through the same piecewise-smooth region.
    pub fn with_signature() -> Self {
        Self {
            nodes: RefCell::default(),
            track_signature: true,
            signature: Cell::new(0xcbf2_9ce4_8422_2325),
            degenerate: Cell::new(false),
        }
    }

    pub fn signature(&self) -> u64 {
        self.signature.get()
    }

    /// False once a signature-tracking graph has evaluated a function at a
    /// point where it has no derivative (a repeated smallest eigenvalue).
    pub fn is_regular(&self) -> bool {
        !self.degenerate.get()
    }

    fn mix<I: IntoIterator<Item = u64>>(&self, values: I) {
        if !self.track_signature {
            return;
        }
        let mut h = self.signature.get();
        for v in values {
            h ^= v;
            h = h.wrapping_mul(FNV_PRIME);
        }
        self.signature.set(h);
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.push(t, Op::Leaf, false)
    }

    /// Differentiable input.
    pub fn leaf(&self, t: Tensor) -> Var<'_> {
        self.push(t, Op::Leaf, true)
    }

    /// Registers `t` honoring its own `requires_grad` flag.
    pub fn input(&self, t: &Tensor) -> Var<'_> {
        let rg = t.requires_grad();
        let mut v = t.clone();
        v.zero_grad();
        self.push(v, Op::Leaf, rg)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.constant(Tensor::scalar(v))
    }

    fn push(&self, mut value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        value.set_requires_grad(requires_grad);
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn rg(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn same_graph(&self, other: &Var<'_>) -> Result<()> {
        if std::ptr::eq(self, other.graph) {
            Ok(())
        } else {
            Err(TensorError::Invalid("variables belong to different graphs".into()))
        }
    }

    /// Concatenates along `axis`; all other dims must agree.
    pub fn concat<'g>(&'g self, parts: &[Var<'g>], axis: usize) -> Result<Var<'g>> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Invalid("concat of zero tensors".into()))?;
        for p in parts {
            self.same_graph(p)?;
        }
        let base = first.shape();
        if axis >= base.len() {
            return Err(TensorError::InvalidAxis {
                op: "concat",
                axis,
                rank: base.len(),
            });
        }
        let mut total = 0;
        for p in parts {
            let s = p.shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: base.clone(),
                    rhs: s,
                });
            }
            total += s[axis];
        }
        let mut out_shape = base.clone();
        out_shape[axis] = total;
        let outer = numel(&base[..axis]);
        let inner = numel(&base[axis + 1..]);
        let mut data = vec![0.0; numel(&out_shape)];
        let rg;
        {
            let nodes = self.nodes.borrow();
            let mut col = 0;
            for p in parts {
                let src = &nodes[p.id].value;
                let len = src.shape()[axis] * inner;
                for o in 0..outer {
                    let dst = o * total * inner + col * inner;
                    data[dst..dst + len].copy_from_slice(&src.data()[o * len..(o + 1) * len]);
                }
                col += src.shape()[axis];
            }
            rg = parts.iter().any(|p| nodes[p.id].requires_grad);
        }
        let value = Tensor::new(&out_shape, data)?;
        Ok(self.push(
            value,
            Op::Concat {
                inputs: parts.iter().map(|p| p.id).collect(),
                axis,
            },
            rg,
        ))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        self.same_graph(&loss)?;
        let nodes = self.nodes.borrow();
        let shape = nodes[loss.id].value.shape().to_vec();
        if numel(&shape) != 1 {
            return Err(TensorError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop_node(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients {
            grads,
            sizes: nodes.iter().map(|n| n.value.numel()).collect(),
            requires: nodes.iter().map(|n| n.requires_grad).collect(),
        })
    }

    /// True when every recorded value is finite.
    pub fn all_finite(&self) -> bool {
        self.nodes.borrow().iter().all(|n| n.value.is_finite())
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, f: impl FnOnce(&mut [f64])) {
    if !nodes[id].requires_grad {
        return;
    }
    let slot = grads[id].get_or_insert_with(|| vec![0.0; nodes[id].value.numel()]);
    f(slot);
}

fn backprop_node(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out = &nodes[id].value;
    match &nodes[id].op {
        Op::Leaf => {}
        Op::Unary { x, kind } => {
            let xv = nodes[*x].value.data();
            let yv = out.data();
            accumulate(grads, nodes, *x, |dx| {
                for i in 0..dx.len() {
                    dx[i] += g[i] * kind.derivative(xv[i], yv[i]);
                }
            });
        }
        Op::Binary {
            a,
            b,
            kind,
            map_a,
            map_b,
        } => {
            let av = nodes[*a].value.data();
            let bv = nodes[*b].value.data();
            let yv = out.data();
            accumulate(grads, nodes, *a, |da| {
                for i in 0..g.len() {
                    let (ia, ib) = (map_a.get(i), map_b.get(i));
                    da[ia] += match kind {
                        Binary::Add | Binary::Sub => g[i],
                        Binary::Mul => g[i] * bv[ib],
                        Binary::Div => g[i] / bv[ib],
                    };
                }
            });
            accumulate(grads, nodes, *b, |db| {
                for i in 0..g.len() {
                    let (ia, ib) = (map_a.get(i), map_b.get(i));
                    db[ib] += match kind {
                        Binary::Add => g[i],
                        Binary::Sub => -g[i],
                        Binary::Mul => g[i] * av[ia],
                        Binary::Div => -g[i] * yv[i] / bv[ib],
                    };
                }
            });
        }
        Op::MatMul {
            a,
            b,
            m,
            k,
            n,
            map_a,
            map_b,
            batches,
        } => {
            let (m, k, n) = (*m, *k, *n);
            let av = nodes[*a].value.data();
            let bv = nodes[*b].value.data();
            accumulate(grads, nodes, *a, |da| {
                for bi in 0..*batches {
                    let (oa, ob) = (map_a.get(bi) * m * k, map_b.get(bi) * k * n);
                    let gb = &g[bi * m * n..(bi + 1) * m * n];
                    gemm(m, n, k, gb, false, &bv[ob..ob + k * n], true, &mut da[oa..oa + m * k], true);
                }
            });
            accumulate(grads, nodes, *b, |db| {
                for bi in 0..*batches {
                    let (oa, ob) = (map_a.get(bi) * m * k, map_b.get(bi) * k * n);
                    let gb = &g[bi * m * n..(bi + 1) * m * n];
                    gemm(k, m, n, &av[oa..oa + m * k], true, gb, false, &mut db[ob..ob + k * n], true);
                }
            });
        }
        Op::Sum { x, axis } => {
            let (outer, len, inner) = axis_split("sum", nodes[*x].value.shape(), *axis).unwrap();
            accumulate(grads, nodes, *x, |dx| {
                for o in 0..outer {
                    for j in 0..len {
                        for i in 0..inner {
                            dx[(o * len + j) * inner + i] += g[o * inner + i];
                        }
                    }
                }
            });
        }
        Op::Max { x, axis, argmax } => {
            let (_, len, inner) = axis_split("max", nodes[*x].value.shape(), *axis).unwrap();
            accumulate(grads, nodes, *x, |dx| {
                for (r, &j) in argmax.iter().enumerate() {
                    let (o, i) = (r / inner, r % inner);
                    dx[(o * len + j) * inner + i] += g[r];
                }
            });
        }
        Op::Softmax { x, axis } => {
            let (outer, len, inner) = axis_split("softmax", out.shape(), *axis).unwrap();
            let y = out.data();
            accumulate(grads, nodes, *x, |dx| {
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * len + j) * inner + i;
                        let dot: f64 = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                        for j in 0..len {
                            dx[at(j)] += y[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
            });
        }
        Op::Reshape { x } => {
            accumulate(grads, nodes, *x, |dx| {
                for (d, v) in dx.iter_mut().zip(g) {
                    *d += v;
                }
            });
        }
        Op::Permute { x, table } => {
            accumulate(grads, nodes, *x, |dx| {
                for (i, &src) in table.iter().enumerate() {
                    dx[src] += g[i];
                }
            });
        }
        Op::Narrow { x, axis, start } => {
            let src_shape = nodes[*x].value.shape();
            let (outer, len, inner) = axis_split("narrow", src_shape, *axis).unwrap();
            let width = out.shape()[*axis];
            accumulate(grads, nodes, *x, |dx| {
                for o in 0..outer {
                    let src = (o * len + start) * inner;
                    let dst = o * width * inner;
                    for t in 0..width * inner {
                        dx[src + t] += g[dst + t];
                    }
                }
            });
        }
        Op::Concat { inputs, axis } => {
            let out_shape = out.shape();
            let outer = numel(&out_shape[..*axis]);
            let inner = numel(&out_shape[axis + 1..]);
            let total = out_shape[*axis];
            let mut col = 0;
            for &p in inputs {
                let width = nodes[p].value.shape()[*axis];
                let len = width * inner;
                accumulate(grads, nodes, p, |dp| {
                    for o in 0..outer {
                        let src = o * total * inner + col * inner;
                        for t in 0..len {
                            dp[o * len + t] += g[src + t];
                        }
                    }
                });
                col += width;
            }
        }
        Op::Gather { x, indices } => {
            let row = numel(&out.shape()[1..]);
            accumulate(grads, nodes, *x, |dx| {
                for (r, &src) in indices.iter().enumerate() {
                    for t in 0..row {
                        dx[src * row + t] += g[r * row + t];
                    }
                }
            });
        }
        Op::SymEigMin {
            x,
            eigenvalues,
            eigenvectors,
        } => {
            let n = eigenvalues.len();
            accumulate(grads, nodes, *x, |dx| {
                sym_eig_min_backward(n, eigenvalues, eigenvectors, g, dx);
            });
        }
    }
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.rg(self.id)
    }

    /// Copy of the forward value.
    pub fn value(&self) -> Tensor {
        let mut t = self.graph.nodes.borrow()[self.id].value.clone();
        t.set_requires_grad(false);
        t
    }

    pub fn data(&self) -> Vec<f64> {
        self.graph.nodes.borrow()[self.id].value.data().to_vec()
    }

    pub fn with_data<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(self.graph.nodes.borrow()[self.id].value.data())
    }

    pub fn item(&self) -> f64 {
        self.graph.nodes.borrow()[self.id].value.item()
    }

    fn unary(self, kind: Unary) -> Var<'g> {
        let (value, rg) = {
            let nodes = self.graph.nodes.borrow();
            let src = &nodes[self.id].value;
            let data: Vec<f64> = src.data().iter().map(|&x| kind.apply(x)).collect();
            if self.graph.track_signature {
                match kind {
                    Unary::Relu => self.graph.mix(src.data().iter().map(|&x| (x > 0.0) as u64)),
                    Unary::Clamp(lo, hi) => self
                        .graph
                        .mix(src.data().iter().map(|&x| ((x < lo) as u64) | (((x > hi) as u64) << 1))),
                    _ => {}
                }
            }
            (
                Tensor::new(src.shape(), data).expect("same shape"),
                nodes[self.id].requires_grad,
            )
        };
        self.graph.push(value, Op::Unary { x: self.id, kind }, rg)
    }

    pub fn neg(self) -> Var<'g> {
        self.unary(Unary::Neg)
    }
    pub fn relu(self) -> Var<'g> {
        self.unary(Unary::Relu)
    }
    pub fn sigmoid(self) -> Var<'g> {
        self.unary(Unary::Sigmoid)
    }
    pub fn tanh(self) -> Var<'g> {
        self.unary(Unary::Tanh)
    }
    pub fn exp(self) -> Var<'g> {
        self.unary(Unary::Exp)
    }
    pub fn ln(self) -> Var<'g> {
        self.unary(Unary::Ln)
    }
    pub fn sqrt(self) -> Var<'g> {
        self.unary(Unary::Sqrt)
    }
    pub fn square(self) -> Var<'g> {
        self.unary(Unary::Square)
    }
    /// `ln(1 + eˣ)`, evaluated stably.
    pub fn softplus(self) -> Var<'g> {
        self.unary(Unary::Softplus)
    }
    pub fn scale(self, c: f64) -> Var<'g> {
        self.unary(Unary::Scale(c))
    }
    pub fn add_scalar(self, c: f64) -> Var<'g> {
        self.unary(Unary::AddScalar(c))
    }
    /// Gradient passes only where the input lies inside `[lo, hi]`.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'g> {
        self.unary(Unary::Clamp(lo, hi))
    }

    fn binary(self, rhs: Var<'g>, kind: Binary, op: &'static str) -> Result<Var<'g>> {
        self.graph.same_graph(&rhs)?;
        let (value, map_a, map_b, rg) = {
            let nodes = self.graph.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[rhs.id].value);
            let out_shape = broadcast_shape(op, a.shape(), b.shape())?;
            let map_a = BroadcastMap::new(a.shape(), &out_shape);
            let map_b = BroadcastMap::new(b.shape(), &out_shape);
            let (av, bv) = (a.data(), b.data());
            let n = numel(&out_shape);
            let data: Vec<f64> = (0..n)
                .map(|i| {
                    let (x, y) = (av[map_a.get(i)], bv[map_b.get(i)]);
                    match kind {
                        Binary::Add => x + y,
                        Binary::Sub => x - y,
                        Binary::Mul => x * y,
                        Binary::Div => x / y,
                    }
                })
                .collect();
            let rg = nodes[self.id].requires_grad || nodes[rhs.id].requires_grad;
            (Tensor::new(&out_shape, data)?, map_a, map_b, rg)
        };
        Ok(self.graph.push(
            value,
            Op::Binary {
                a: self.id,
                b: rhs.id,
                kind,
                map_a,
                map_b,
            },
            rg,
        ))
    }

    pub fn add(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.binary(rhs, Binary::Add, "add")
    }
    pub fn sub(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.binary(rhs, Binary::Sub, "sub")
    }
    pub fn mul(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.binary(rhs, Binary::Mul, "mul")
    }
    pub fn div(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.binary(rhs, Binary::Div, "div")
    }

    /// `[.., m, k] · [.., k, n]` with broadcast batch dimensions.
    pub fn matmul(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.graph.same_graph(&rhs)?;
        let (value, op, rg) = {
            let nodes = self.graph.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[rhs.id].value);
            let (sa, sb) = (a.shape(), b.shape());
            let mismatch = || TensorError::ShapeMismatch {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            };
            if sa.len() < 2 || sb.len() < 2 || sa[sa.len() - 1] != sb[sb.len() - 2] {
                return Err(mismatch());
            }
            let (m, k, n) = (sa[sa.len() - 2], sa[sa.len() - 1], sb[sb.len() - 1]);
            let (ba, bb) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
            let batch = broadcast_shape("matmul", ba, bb).map_err(|_| mismatch())?;
            let batches = numel(&batch);
            let map_a = BroadcastMap::new(ba, &batch);
            let map_b = BroadcastMap::new(bb, &batch);
            let mut data = vec![0.0; batches * m * n];
            for bi in 0..batches {
                let (oa, ob) = (map_a.get(bi) * m * k, map_b.get(bi) * k * n);
                gemm(
                    m,
                    k,
                    n,
                    &a.data()[oa..oa + m * k],
                    false,
                    &b.data()[ob..ob + k * n],
                    false,
                    &mut data[bi * m * n..(bi + 1) * m * n],
                    false,
                );
            }
            let mut shape = batch;
            shape.extend([m, n]);
            let rg = nodes[self.id].requires_grad || nodes[rhs.id].requires_grad;
            (
                Tensor::new(&shape, data)?,
                Op::MatMul {
                    a: self.id,
                    b: rhs.id,
                    m,
                    k,
                    n,
                    map_a,
                    map_b,
                    batches,
                },
                rg,
            )
        };
        Ok(self.graph.push(value, op, rg))
    }

    /// Sum along `axis`, keeping it with size 1.
    pub fn sum_axis(self, axis: usize) -> Result<Var<'g>> {
        let (value, rg) = {
            let nodes = self.graph.nodes.borrow();
            let src = &nodes[self.id].value;
            let (outer, len, inner) = axis_split("sum", src.shape(), axis)?;
            let x = src.data();
            let mut data = vec![0.0; outer * inner];
            for o in 0..outer {
                for j in 0..len {
                    let row = &x[(o * len + j) * inner..(o * len + j + 1) * inner];
                    for (d, v) in data[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                        *d += v;
                    }
                }
            }
            let mut shape = src.shape().to_vec();
            shape[axis] = 1;
            (Tensor::new(&shape, data)?, nodes[self.id].requires_grad)
        };
        Ok(self.graph.push(value, Op::Sum { x: self.id, axis }, rg))
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'g>> {
        let len = *self.shape().get(axis).ok_or(TensorError::InvalidAxis {
            op: "mean",
            axis,
            rank: self.shape().len(),
        })?;
        Ok(self.sum_axis(axis)?.scale(1.0 / len as f64))
    }

    /// Sum of all elements as a `[1]` tensor.
    pub fn sum_all(self) -> Var<'g> {
        let n = self.with_data(|d| d.len());
        self.reshape(&[n]).expect("flatten").sum_axis(0).expect("axis 0")
    }

    pub fn mean_all(self) -> Var<'g> {
        let n = self.with_data(|d| d.len());
        self.sum_all().scale(1.0 / n as f64)
    }

    /// Maximum along `axis` (kept with size 1) and the arg-max positions,
    /// lowest index on ties.
    pub fn max_axis(self, axis: usize) -> Result<(Var<'g>, Vec<usize>)> {
        let (value, argmax, rg) = {
            let nodes = self.graph.nodes.borrow();
            let src = &nodes[self.id].value;
            let (outer, len, inner) = axis_split("max", src.shape(), axis)?;
            if len == 0 {
                return Err(TensorError::EmptyAxis { op: "max", axis });
            }
            let x = src.data();
            let mut data = vec![f64::NEG_INFINITY; outer * inner];
            let mut argmax = vec![0usize; outer * inner];
            for o in 0..outer {
                for j in 0..len {
                    for i in 0..inner {
                        let v = x[(o * len + j) * inner + i];
                        let r = o * inner + i;
                        if v > data[r] {
                            data[r] = v;
                            argmax[r] = j;
                        }
                    }
                }
            }
            let mut shape = src.shape().to_vec();
            shape[axis] = 1;
            (Tensor::new(&shape, data)?, argmax, nodes[self.id].requires_grad)
        };
        self.graph.mix(argmax.iter().map(|&j| j as u64));
        let ret = argmax.clone();
        let var = self.graph.push(
            value,
            Op::Max {
                x: self.id,
                axis,
                argmax,
            },
            rg,
        );
        Ok((var, ret))
    }

    /// Softmax along `axis` with max subtraction.
    pub fn softmax(self, axis: usize) -> Result<Var<'g>> {
        let (value, rg) = {
            let nodes = self.graph.nodes.borrow();
            let src = &nodes[self.id].value;
            let (outer, len, inner) = axis_split("softmax", src.shape(), axis)?;
            let x = src.data();
            let mut data = vec![0.0; x.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let at = |j: usize| (o * len + j) * inner + i;
                    let mx = (0..len).map(|j| x[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for j in 0..len {
                        let e = (x[at(j)] - mx).exp();
                        data[at(j)] = e;
                        total += e;
                    }
                    for j in 0..len {
                        data[at(j)] /= total;
                    }
                }
            }
            (Tensor::new(src.shape(), data)?, nodes[self.id].requires_grad)
        };
        Ok(self.graph.push(value, Op::Softmax { x: self.id, axis }, rg))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g>> {
        let (value, rg) = {
            let nodes = self.graph.nodes.borrow();
            let src = &nodes[self.id].value;
            if numel(shape) != src.numel() {
                return Err(TensorError::ShapeMismatch {
                    op: "reshape",
                    lhs: src.shape().to_vec(),
                    rhs: shape.to_vec(),
                });
            }
            (Tensor::new(shape, src.data().to_vec())?, nodes[self.id].requires_grad)
        };
        Ok(self.graph.push(value, Op::Reshape { x: self.id }, rg))
    }

    pub fn permute(self, axes: &[usize]) -> Result<Var<'g>> {
        let (value, table, rg) = {
            let nodes = self.graph.nodes.borrow();
            let src = &nodes[self.id].value;
            let rank = src.rank();
            let mut seen = vec![false; rank];
            if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
                return Err(TensorError::Invalid(format!(
                    "permute: {axes:?} is not a permutation of rank {rank}"
                )));
            }
            let table = permute_table(src.shape(), axes);
            let data: Vec<f64> = table.iter().map(|&t| src.data()[t]).collect();
            let shape: Vec<usize> = axes.iter().map(|&a| src.shape()[a]).collect();
            (Tensor::new(&shape, data)?, table, nodes[self.id].requires_grad)
        };
        Ok(self.graph.push(value, Op::Permute { x: self.id, table }, rg))
    }

    /// Swaps the last two dimensions.
    pub fn transpose(self) -> Result<Var<'g>> {
        let rank = self.shape().len();
        if rank < 2 {
            return Err(TensorError::InvalidAxis {
                op: "transpose",
                axis: 1,
                rank,
            });
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(rank - 2, rank - 1);
        self.permute(&axes)
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Var<'g>> {
        let (value, rg) = {
            let nodes = self.graph.nodes.borrow();
            let src = &nodes[self.id].value;
            let (outer, full, inner) = axis_split("narrow", src.shape(), axis)?;
            if len == 0 || start + len > full {
                return Err(TensorError::Invalid(format!(
                    "narrow: range {start}..{} outside axis of length {full}",
                    start + len
                )));
            }
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let s = (o * full + start) * inner;
                data.extend_from_slice(&src.data()[s..s + len * inner]);
            }
            let mut shape = src.shape().to_vec();
            shape[axis] = len;
            (Tensor::new(&shape, data)?, nodes[self.id].requires_grad)
        };
        Ok(self.graph.push(
            value,
            Op::Narrow {
                x: self.id,
                axis,
                start,
            },
            rg,
        ))
    }

    /// Rows (first axis) in the given order; repeated indices are allowed.
    pub fn gather_rows(self, indices: &[usize]) -> Result<Var<'g>> {
        let (value, rg) = {
            let nodes = self.graph.nodes.borrow();
            let src = &nodes[self.id].value;
            let rows = src.shape()[0];
            let row = src.numel() / rows;
            let mut data = Vec::with_capacity(indices.len() * row);
            for &i in indices {
                if i >= rows {
                    return Err(TensorError::IndexOutOfRange { index: i, rows });
                }
                data.extend_from_slice(&src.data()[i * row..(i + 1) * row]);
            }
            let mut shape = src.shape().to_vec();
            shape[0] = indices.len();
            (Tensor::new(&shape, data)?, nodes[self.id].requires_grad)
        };
        self.graph.mix(indices.iter().map(|&i| i as u64));
        Ok(self.graph.push(
            value,
            Op::Gather {
                x: self.id,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Unit eigenvector of the smallest eigenvalue of the symmetric part of a
    /// square matrix. The sign is fixed so the largest-magnitude entry is positive.
    pub fn sym_eig_min(self) -> Result<Var<'g>> {
        let (value, eigenvalues, eigenvectors, rg) = {
            let nodes = self.graph.nodes.borrow();
            let src = &nodes[self.id].value;
            let s = src.shape();
            if s.len() != 2 || s[0] != s[1] {
                return Err(TensorError::ShapeMismatch {
                    op: "sym_eig_min",
                    lhs: s.to_vec(),
                    rhs: s.to_vec(),
                });
            }
            let (vec, vals, vecs) = sym_eig_min_forward(s[0], src.data())?;
            if self.graph.track_signature {
                let scale = vals.iter().fold(0.0f64, |a, b| a.max(b.abs()));
                if s[0] > 1 && vals[1] - vals[0] <= REPEATED_EIGENVALUE * scale {
                    self.graph.degenerate.set(true);
                }
                let pivot = (0..vec.len()).fold(0, |p, i| if vec[i].abs() > vec[p].abs() { i } else { p });
                self.graph.mix([pivot as u64]);
            }
            (Tensor::new(&[s[0]], vec)?, vals, vecs, nodes[self.id].requires_grad)
        };
        Ok(self.graph.push(
            value,
            Op::SymEigMin {
                x: self.id,
                eigenvalues,
                eigenvectors,
            },
            rg,
        ))
    }
}
