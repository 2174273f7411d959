use std::cell::{Ref, RefCell};

use crate::error::{shape_err, DiffError, Result};
use crate::scalar::{sum, Scalar};
use crate::tensor::Tensor;

pub type NodeId = usize;

/// Recorded operation with the inputs and whatever the backward pass needs.
#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Reshape(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddScalar(NodeId),
    MulScalar(NodeId, T),
    Exp(NodeId),
    Log(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    MaskedFill(NodeId, Vec<bool>),
    Gather(NodeId, Vec<usize>),
    ConcatCols(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    SliceCols(NodeId, usize),
    Sum(NodeId),
    Mean(NodeId),
    SumRows(NodeId),
    BatchNorm(Box<BnSaved<T>>),
}

#[derive(Debug)]
struct BnSaved<T> {
    x: NodeId,
    gamma: NodeId,
    beta: NodeId,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    /// `None` in eval mode: statistics are constants.
    active: Option<Vec<bool>>,
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Per-feature statistics of one training-mode batch-norm call.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

/// Gradients produced by [`Tape::backward`], indexed by node id.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, id: NodeId) -> Option<&[T]> {
        self.grads.get(id).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `id` (if any) into `param.grad`.
    pub fn accumulate_into(&self, id: NodeId, param: &mut Tensor<T>) {
        match self.wrt(id) {
            Some(g) => param.accumulate_grad(g),
            None => {
                let n = param.numel();
                param.grad.get_or_insert_with(|| vec![T::zero(); n]);
            }
        }
    }
}

/// Wengert list of tensor operations.
///
/// Operations are recorded only when at least one input requires a
/// gradient; otherwise the result is stored as a constant.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: NodeId,
}

impl<T> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        let op = if needs_grad { op } else { Op::Leaf };
        nodes.push(Node { value, op, needs_grad });
        Var { tape: self, id }
    }

    /// Records `t` as a leaf; it is differentiated iff `t.requires_grad`.
    pub fn leaf(&self, t: Tensor<T>) -> Var<'_, T> {
        let needs = t.requires_grad;
        let mut t = t;
        t.grad = None;
        self.push(t, Op::Leaf, needs)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, t: Tensor<T>) -> Var<'_, T> {
        let mut t = t;
        t.requires_grad = false;
        t.grad = None;
        self.push(t, Op::Leaf, false)
    }

    /// Copies a parameter onto the tape as a differentiable leaf.
    pub fn param(&self, t: &Tensor<T>) -> Var<'_, T> {
        let v = Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("consistent tensor");
        self.push(v, Op::Leaf, true)
    }

    pub fn var(&self, id: NodeId) -> Var<'_, T> {
        assert!(id < self.len(), "node {id} not on tape");
        Var { tape: self, id }
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].needs_grad)
    }

    /// Reverse-mode sweep from a scalar `loss`. Clears the tape afterwards.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients<T>> {
        let nodes = std::mem::take(self.nodes.get_mut());
        let shape = nodes
            .get(loss)
            .ok_or_else(|| DiffError::Invalid(format!("loss node {loss} not on tape")))?
            .value
            .shape()
            .to_vec();
        if shape.iter().product::<usize>() != 1 {
            return Err(DiffError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss] = Some(vec![T::one()]);
        for id in (0..=loss).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if node.needs_grad {
                backprop_node(&nodes, node, &g, &mut grads)?;
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn acc<T: Scalar>(grads: &mut [Option<Vec<T>>], nodes: &[Node<T>], id: NodeId, g: Vec<T>) {
    if !nodes[id].needs_grad {
        return;
    }
    match &mut grads[id] {
        Some(buf) => {
            for (b, v) in buf.iter_mut().zip(g) {
                *b += v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

fn acc_with<T: Scalar>(
    grads: &mut [Option<Vec<T>>],
    nodes: &[Node<T>],
    id: NodeId,
    f: impl FnOnce(&mut [T]),
) {
    if !nodes[id].needs_grad {
        return;
    }
    let n = nodes[id].value.numel();
    let buf = grads[id].get_or_insert_with(|| vec![T::zero(); n]);
    f(buf);
}

fn backprop_node<T: Scalar>(
    nodes: &[Node<T>],
    node: &Node<T>,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) -> Result<()> {
    let out = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            let (m, k) = av.dims2()?;
            let (_, n) = bv.dims2()?;
            if nodes[*a].needs_grad {
                // dA = G · Bᵀ
                let mut ga = vec![T::zero(); m * k];
                let bd = bv.data();
                for i in 0..m {
                    for p in 0..k {
                        let mut s = T::zero();
                        for j in 0..n {
                            s += g[i * n + j] * bd[p * n + j];
                        }
                        ga[i * k + p] = s;
                    }
                }
                acc(grads, nodes, *a, ga);
            }
            if nodes[*b].needs_grad {
                // dB = Aᵀ · G
                let mut gb = vec![T::zero(); k * n];
                let ad = av.data();
                for i in 0..m {
                    for p in 0..k {
                        let aip = ad[i * k + p];
                        if aip == T::zero() {
                            continue;
                        }
                        let row = &mut gb[p * n..(p + 1) * n];
                        for (r, gv) in row.iter_mut().zip(&g[i * n..(i + 1) * n]) {
                            *r += aip * *gv;
                        }
                    }
                }
                acc(grads, nodes, *b, gb);
            }
        }
        Op::Transpose(a) => {
            let (r, c) = out.dims2()?;
            let mut ga = vec![T::zero(); r * c];
            for i in 0..r {
                for j in 0..c {
                    ga[j * r + i] = g[i * c + j];
                }
            }
            acc(grads, nodes, *a, ga);
        }
        Op::Reshape(a) => acc(grads, nodes, *a, g.to_vec()),
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -T::one() } else { T::one() };
            let is_mul = matches!(node.op, Op::Mul(..));
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            let ma = broadcast_map(av.shape(), out.shape());
            let mb = broadcast_map(bv.shape(), out.shape());
            let (ad, bd) = (av.data(), bv.data());
            acc_with(grads, nodes, *a, |buf| {
                for (i, gv) in g.iter().enumerate() {
                    let f = if is_mul { bd[idx(&mb, i)] } else { T::one() };
                    buf[idx(&ma, i)] += *gv * f;
                }
            });
            acc_with(grads, nodes, *b, |buf| {
                for (i, gv) in g.iter().enumerate() {
                    let f = if is_mul { ad[idx(&ma, i)] } else { sign };
                    buf[idx(&mb, i)] += *gv * f;
                }
            });
        }
        Op::AddScalar(a) => acc(grads, nodes, *a, g.to_vec()),
        Op::MulScalar(a, s) => acc(grads, nodes, *a, g.iter().map(|v| *v * *s).collect()),
        Op::Exp(a) => {
            let ga = g.iter().zip(out.data()).map(|(gv, y)| *gv * *y).collect();
            acc(grads, nodes, *a, ga);
        }
        Op::Log(a) => {
            let x = nodes[*a].value.data();
            acc(grads, nodes, *a, g.iter().zip(x).map(|(gv, x)| *gv / *x).collect());
        }
        Op::Tanh(a) => {
            let ga = g
                .iter()
                .zip(out.data())
                .map(|(gv, y)| *gv * (T::one() - *y * *y))
                .collect();
            acc(grads, nodes, *a, ga);
        }
        Op::Relu(a) => {
            let x = nodes[*a].value.data();
            let ga = g
                .iter()
                .zip(x)
                .map(|(gv, x)| if *x > T::zero() { *gv } else { T::zero() })
                .collect();
            acc(grads, nodes, *a, ga);
        }
        Op::Softmax(a) => {
            let cols = *out.shape().last().unwrap_or(&1);
            let y = out.data();
            let mut ga = vec![T::zero(); y.len()];
            for r in 0..y.len() / cols.max(1) {
                let s = r * cols..(r + 1) * cols;
                let dot: T = sum(g[s.clone()].iter().zip(&y[s.clone()]).map(|(a, b)| *a * *b));
                for i in s {
                    ga[i] = y[i] * (g[i] - dot);
                }
            }
            acc(grads, nodes, *a, ga);
        }
        Op::LogSoftmax(a) => {
            let cols = *out.shape().last().unwrap_or(&1);
            let y = out.data();
            let mut ga = vec![T::zero(); y.len()];
            for r in 0..y.len() / cols.max(1) {
                let s = r * cols..(r + 1) * cols;
                let gsum: T = sum(g[s.clone()].iter().copied());
                for i in s {
                    ga[i] = g[i] - y[i].exp() * gsum;
                }
            }
            acc(grads, nodes, *a, ga);
        }
        Op::MaskedFill(a, mask) => {
            let ga = g
                .iter()
                .zip(mask)
                .map(|(gv, m)| if *m { T::zero() } else { *gv })
                .collect();
            acc(grads, nodes, *a, ga);
        }
        Op::Gather(a, index) => {
            acc_with(grads, nodes, *a, |buf| {
                for (gv, &i) in g.iter().zip(index) {
                    buf[i] += *gv;
                }
            });
        }
        Op::ConcatCols(parts) => {
            let (rows, cols) = out.dims2()?;
            let mut off = 0;
            for &p in parts {
                let pc = nodes[p].value.dims2()?.1;
                let mut gp = vec![T::zero(); rows * pc];
                for r in 0..rows {
                    gp[r * pc..(r + 1) * pc]
                        .copy_from_slice(&g[r * cols + off..r * cols + off + pc]);
                }
                acc(grads, nodes, p, gp);
                off += pc;
            }
        }
        Op::ConcatRows(parts) => {
            let mut off = 0;
            for &p in parts {
                let n = nodes[p].value.numel();
                acc(grads, nodes, p, g[off..off + n].to_vec());
                off += n;
            }
        }
        Op::SliceCols(a, start) => {
            let (rows, w) = out.dims2()?;
            let cols = nodes[*a].value.dims2()?.1;
            acc_with(grads, nodes, *a, |buf| {
                for r in 0..rows {
                    for c in 0..w {
                        buf[r * cols + start + c] += g[r * w + c];
                    }
                }
            });
        }
        Op::Sum(a) => {
            let n = nodes[*a].value.numel();
            acc(grads, nodes, *a, vec![g[0]; n]);
        }
        Op::Mean(a) => {
            let n = nodes[*a].value.numel();
            acc(grads, nodes, *a, vec![g[0] / T::lit(n as f64); n]);
        }
        Op::SumRows(a) => {
            let (rows, cols) = nodes[*a].value.dims2()?;
            let mut ga = vec![T::zero(); rows * cols];
            for r in 0..rows {
                ga[r * cols..(r + 1) * cols].copy_from_slice(&g[..cols]);
            }
            acc(grads, nodes, *a, ga);
        }
        Op::BatchNorm(bn) => backprop_batch_norm(nodes, bn, g, grads)?,
    }
    Ok(())
}

fn backprop_batch_norm<T: Scalar>(
    nodes: &[Node<T>],
    bn: &BnSaved<T>,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) -> Result<()> {
    let (rows, feats) = nodes[bn.x].value.dims2()?;
    let gamma = nodes[bn.gamma].value.data();
    let mut dgamma = vec![T::zero(); feats];
    let mut dbeta = vec![T::zero(); feats];
    for r in 0..rows {
        for f in 0..feats {
            let i = r * feats + f;
            dgamma[f] += g[i] * bn.xhat[i];
            dbeta[f] += g[i];
        }
    }
    if nodes[bn.x].needs_grad {
        let mut dx = vec![T::zero(); rows * feats];
        match &bn.active {
            None => {
                for r in 0..rows {
                    for f in 0..feats {
                        let i = r * feats + f;
                        dx[i] = g[i] * gamma[f] * bn.inv_std[f];
                    }
                }
            }
            Some(active) => {
                let m = T::lit(active.iter().filter(|a| **a).count().max(1) as f64);
                // Statistics come from active rows only but every row is normalised with them.
                let mut sum_dxhat = vec![T::zero(); feats];
                let mut sum_dxhat_xhat = vec![T::zero(); feats];
                for r in 0..rows {
                    for f in 0..feats {
                        let i = r * feats + f;
                        let dxhat = g[i] * gamma[f];
                        sum_dxhat[f] += dxhat;
                        sum_dxhat_xhat[f] += dxhat * bn.xhat[i];
                    }
                }
                for r in 0..rows {
                    for f in 0..feats {
                        let i = r * feats + f;
                        let inv = bn.inv_std[f];
                        let mut v = g[i] * gamma[f] * inv;
                        if active[r] {
                            v -= inv * (sum_dxhat[f] + bn.xhat[i] * sum_dxhat_xhat[f]) / m;
                        }
                        dx[i] = v;
                    }
                }
            }
        }
        acc(grads, nodes, bn.x, dx);
    }
    acc(grads, nodes, bn.gamma, dgamma);
    acc(grads, nodes, bn.beta, dbeta);
    Ok(())
}

#[inline]
fn idx(map: &Option<Vec<usize>>, i: usize) -> usize {
    match map {
        Some(m) => m[i],
        None => i,
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every flat output index, the flat index of the broadcast input.
/// `None` when no broadcasting happens.
fn broadcast_map(input: &[usize], out: &[usize]) -> Option<Vec<usize>> {
    if input == out {
        return None;
    }
    let n = out.len();
    let pad = n - input.len();
    let mut in_strides = vec![0; n];
    let mut s = 1;
    for i in (0..input.len()).rev() {
        in_strides[i + pad] = if input[i] == 1 { 0 } else { s };
        s *= input[i];
    }
    let total: usize = out.iter().product();
    let mut map = Vec::with_capacity(total);
    let mut counter = vec![0usize; n];
    let mut cur = 0usize;
    for _ in 0..total {
        map.push(cur);
        for d in (0..n).rev() {
            counter[d] += 1;
            cur += in_strides[d];
            if counter[d] < out[d] {
                break;
            }
            cur -= in_strides[d] * counter[d];
            counter[d] = 0;
        }
    }
    Some(map)
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor<T>> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        self.value().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> T {
        self.value().data()[0]
    }

    fn unary(&self, op: Op<T>, f: impl FnOnce(&Tensor<T>) -> Result<Tensor<T>>) -> Result<Self> {
        let v = f(&self.value())?;
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(v, op, needs))
    }

    fn map(&self, op: Op<T>, f: impl Fn(T) -> T) -> Self {
        let v = {
            let x = self.value();
            Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| f(*v)).collect())
                .expect("same shape")
        };
        let needs = self.tape.needs(&[self.id]);
        self.tape.push(v, op, needs)
    }

    /// Matrix product of two 2-D tensors.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let v = {
            let a = self.value();
            let b = other.value();
            let (m, k) = a.dims2().map_err(|_| shape_err("matmul", &[a.shape(), b.shape()]))?;
            let (k2, n) = b.dims2().map_err(|_| shape_err("matmul", &[a.shape(), b.shape()]))?;
            if k != k2 {
                return Err(shape_err("matmul", &[a.shape(), b.shape()]));
            }
            let (ad, bd) = (a.data(), b.data());
            let mut out = vec![T::zero(); m * n];
            for i in 0..m {
                let row = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let aip = ad[i * k + p];
                    if aip == T::zero() {
                        continue;
                    }
                    for (o, bv) in row.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                        *o += aip * *bv;
                    }
                }
            }
            Tensor::new([m, n], out)?
        };
        let needs = self.tape.needs(&[self.id, other.id]);
        Ok(self.tape.push(v, Op::MatMul(self.id, other.id), needs))
    }

    pub fn transpose(&self) -> Result<Self> {
        self.unary(Op::Transpose(self.id), |x| {
            let (r, c) = x.dims2().map_err(|_| shape_err("transpose", &[x.shape()]))?;
            let d = x.data();
            let mut out = vec![T::zero(); r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = d[i * c + j];
                }
            }
            Tensor::new([c, r], out)
        })
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        self.unary(Op::Reshape(self.id), |x| x.clone().reshaped(shape.to_vec()))
    }

    fn binary(&self, other: &Self, op: Op<T>, name: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        let v = {
            let a = self.value();
            let b = other.value();
            let shape = broadcast_shape(a.shape(), b.shape())
                .ok_or_else(|| shape_err(name, &[a.shape(), b.shape()]))?;
            let ma = broadcast_map(a.shape(), &shape);
            let mb = broadcast_map(b.shape(), &shape);
            let (ad, bd) = (a.data(), b.data());
            let n: usize = shape.iter().product();
            let data = (0..n).map(|i| f(ad[idx(&ma, i)], bd[idx(&mb, i)])).collect();
            Tensor::new(shape, data)?
        };
        let needs = self.tape.needs(&[self.id, other.id]);
        Ok(self.tape.push(v, op, needs))
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.binary(other, Op::Add(self.id, other.id), "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.binary(other, Op::Sub(self.id, other.id), "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.binary(other, Op::Mul(self.id, other.id), "mul", |a, b| a * b)
    }

    pub fn add_scalar(&self, s: T) -> Self {
        self.map(Op::AddScalar(self.id), |v| v + s)
    }

    pub fn mul_scalar(&self, s: T) -> Self {
        self.map(Op::MulScalar(self.id, s), |v| v * s)
    }

    pub fn neg(&self) -> Self {
        self.mul_scalar(-T::one())
    }

    pub fn exp(&self) -> Self {
        self.map(Op::Exp(self.id), |v| v.exp())
    }

    pub fn ln(&self) -> Self {
        self.map(Op::Log(self.id), |v| v.ln())
    }

    pub fn tanh(&self) -> Self {
        self.map(Op::Tanh(self.id), |v| v.tanh())
    }

    pub fn relu(&self) -> Self {
        self.map(Op::Relu(self.id), |v| if v > T::zero() { v } else { T::zero() })
    }

    /// Softmax over the last axis, max-subtracted.
    pub fn softmax(&self) -> Self {
        self.last_axis(Op::Softmax(self.id), false)
    }

    pub fn log_softmax(&self) -> Self {
        self.last_axis(Op::LogSoftmax(self.id), true)
    }

    fn last_axis(&self, op: Op<T>, log: bool) -> Self {
        let v = {
            let x = self.value();
            let cols = (*x.shape().last().unwrap_or(&1)).max(1);
            let mut out = x.data().to_vec();
            for row in out.chunks_mut(cols) {
                let max = row.iter().fold(T::neg_infinity(), |m, v| m.max(*v));
                let z: T = sum(row.iter().map(|v| (*v - max).exp()));
                if log {
                    let lz = z.ln();
                    row.iter_mut().for_each(|v| *v = *v - max - lz);
                } else {
                    row.iter_mut().for_each(|v| *v = (*v - max).exp() / z);
                }
            }
            Tensor::new(x.shape().to_vec(), out).expect("same shape")
        };
        let needs = self.tape.needs(&[self.id]);
        self.tape.push(v, op, needs)
    }

    /// Replaces positions where `mask` is true with `fill`. The mask is
    /// broadcast against the value's shape.
    pub fn masked_fill(&self, mask: &[bool], mask_shape: &[usize], fill: T) -> Result<Self> {
        let (v, full) = {
            let x = self.value();
            if mask.len() != mask_shape.iter().product::<usize>() {
                return Err(shape_err("masked_fill", &[x.shape(), mask_shape]));
            }
            let shape = broadcast_shape(x.shape(), mask_shape)
                .filter(|s| s.as_slice() == x.shape())
                .ok_or_else(|| shape_err("masked_fill", &[x.shape(), mask_shape]))?;
            let map = broadcast_map(mask_shape, &shape);
            let full: Vec<bool> = (0..x.numel()).map(|i| mask[idx(&map, i)]).collect();
            let data = x
                .data()
                .iter()
                .zip(&full)
                .map(|(v, m)| if *m { fill } else { *v })
                .collect();
            (Tensor::new(shape, data)?, full)
        };
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(v, Op::MaskedFill(self.id, full), needs))
    }

    /// Gathers flat positions of the input into a tensor of `shape`.
    pub fn gather(&self, index: &[usize], shape: &[usize]) -> Result<Self> {
        let v = {
            let x = self.value();
            if index.len() != shape.iter().product::<usize>() || index.iter().any(|&i| i >= x.numel()) {
                return Err(shape_err("gather", &[x.shape(), shape]));
            }
            let d = x.data();
            Tensor::new(shape.to_vec(), index.iter().map(|&i| d[i]).collect())?
        };
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(v, Op::Gather(self.id, index.to_vec()), needs))
    }

    /// Selects whole rows of a 2-D tensor (index-select on axis 0).
    pub fn index_rows(&self, rows: &[usize]) -> Result<Self> {
        let (r, c) = self.value().dims2()?;
        if rows.iter().any(|&i| i >= r) {
            return Err(shape_err("index_rows", &[&[r, c], &[rows.len()]]));
        }
        let index: Vec<usize> = rows.iter().flat_map(|&i| (i * c)..(i * c + c)).collect();
        self.gather(&index, &[rows.len(), c])
    }

    /// Single element of a 2-D tensor as a `[1, 1]` tensor.
    pub fn pick(&self, row: usize, col: usize) -> Result<Self> {
        let (_, c) = self.value().dims2()?;
        self.gather(&[row * c + col], &[1, 1])
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Self> {
        let v = {
            let x = self.value();
            let (r, c) = x.dims2()?;
            if start >= end || end > c {
                return Err(shape_err("slice_cols", &[x.shape(), &[start, end]]));
            }
            let w = end - start;
            let d = x.data();
            let mut out = Vec::with_capacity(r * w);
            for i in 0..r {
                out.extend_from_slice(&d[i * c + start..i * c + end]);
            }
            Tensor::new([r, w], out)?
        };
        let needs = self.tape.needs(&[self.id]);
        Ok(self.tape.push(v, Op::SliceCols(self.id, start), needs))
    }

    pub fn concat_cols(parts: &[Self]) -> Result<Self> {
        let tape = parts
            .first()
            .ok_or_else(|| DiffError::Invalid("concat_cols of nothing".into()))?
            .tape;
        let v = {
            let vals: Vec<_> = parts.iter().map(|p| p.value()).collect();
            let rows = vals[0].dims2()?.0;
            let mut widths = Vec::with_capacity(vals.len());
            for v in &vals {
                let (r, c) = v.dims2()?;
                if r != rows {
                    let shapes: Vec<&[usize]> = vals.iter().map(|v| v.shape()).collect();
                    return Err(shape_err("concat_cols", &shapes));
                }
                widths.push(c);
            }
            let total: usize = widths.iter().sum();
            let mut out = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for (v, w) in vals.iter().zip(&widths) {
                    out.extend_from_slice(&v.data()[r * w..(r + 1) * w]);
                }
            }
            Tensor::new([rows, total], out)?
        };
        let ids: Vec<NodeId> = parts.iter().map(|p| p.id).collect();
        let needs = tape.needs(&ids);
        Ok(tape.push(v, Op::ConcatCols(ids), needs))
    }

    pub fn concat_rows(parts: &[Self]) -> Result<Self> {
        let tape = parts
            .first()
            .ok_or_else(|| DiffError::Invalid("concat_rows of nothing".into()))?
            .tape;
        let v = {
            let vals: Vec<_> = parts.iter().map(|p| p.value()).collect();
            let cols = vals[0].dims2()?.1;
            let mut rows = 0;
            let mut out = Vec::new();
            for v in &vals {
                let (r, c) = v.dims2()?;
                if c != cols {
                    let shapes: Vec<&[usize]> = vals.iter().map(|v| v.shape()).collect();
                    return Err(shape_err("concat_rows", &shapes));
                }
                rows += r;
                out.extend_from_slice(v.data());
            }
            Tensor::new([rows, cols], out)?
        };
        let ids: Vec<NodeId> = parts.iter().map(|p| p.id).collect();
        let needs = tape.needs(&ids);
        Ok(tape.push(v, Op::ConcatRows(ids), needs))
    }

    pub fn sum(&self) -> Self {
        let s: T = sum(self.value().data().iter().copied());
        let needs = self.tape.needs(&[self.id]);
        self.tape.push(Tensor::scalar(s), Op::Sum(self.id), needs)
    }

    pub fn mean(&self) -> Self {
        let m = {
            let x = self.value();
            sum(x.data().iter().copied()) / T::lit(x.numel().max(1) as f64)
        };
        let needs = self.tape.needs(&[self.id]);
        self.tape.push(Tensor::scalar(m), Op::Mean(self.id), needs)
    }

    /// Column sums of a 2-D tensor, shape `[1, cols]`.
    pub fn sum_rows(&self) -> Result<Self> {
        self.unary(Op::SumRows(self.id), |x| {
            let (r, c) = x.dims2()?;
            let mut out = vec![T::zero(); c];
            for row in x.data().chunks(c).take(r) {
                for (o, v) in out.iter_mut().zip(row) {
                    *o += *v;
                }
            }
            Tensor::new([1, c], out)
        })
    }

    /// Mean over the rows selected by `rows`, shape `[1, cols]`.
    pub fn mean_rows(&self, rows: &[usize]) -> Result<Self> {
        let picked = self.index_rows(rows)?;
        Ok(picked.sum_rows()?.mul_scalar(T::one() / T::lit(rows.len().max(1) as f64)))
    }

    /// Batch normalisation of `[rows, features]` with statistics over the
    /// rows flagged in `active` (all rows when `None`). Every row is
    /// normalised with those statistics.
    pub fn batch_norm_train(
        &self,
        gamma: &Self,
        beta: &Self,
        active: Option<&[bool]>,
        eps: T,
    ) -> Result<(Self, BatchStats<T>)> {
        let (rows, feats) = self.value().dims2()?;
        let active: Vec<bool> = match active {
            Some(a) if a.len() == rows => a.to_vec(),
            Some(a) => return Err(shape_err("batch_norm", &[&[rows, feats], &[a.len()]])),
            None => vec![true; rows],
        };
        let m = active.iter().filter(|a| **a).count();
        let mut mean = vec![T::zero(); feats];
        let mut var = vec![T::zero(); feats];
        {
            let x = self.value();
            let d = x.data();
            if m > 0 {
                let mt = T::lit(m as f64);
                for r in (0..rows).filter(|r| active[*r]) {
                    for f in 0..feats {
                        mean[f] += d[r * feats + f];
                    }
                }
                mean.iter_mut().for_each(|v| *v = *v / mt);
                for r in (0..rows).filter(|r| active[*r]) {
                    for f in 0..feats {
                        let c = d[r * feats + f] - mean[f];
                        var[f] += c * c;
                    }
                }
                var.iter_mut().for_each(|v| *v = *v / mt);
            }
        }
        let stats = BatchStats { mean: mean.clone(), var: var.clone() };
        let out = self.normalise(gamma, beta, &mean, &var, eps, Some(active))?;
        Ok((out, stats))
    }

    /// Batch normalisation with fixed (running) statistics.
    pub fn batch_norm_eval(&self, gamma: &Self, beta: &Self, mean: &[T], var: &[T], eps: T) -> Result<Self> {
        self.normalise(gamma, beta, mean, var, eps, None)
    }

    fn normalise(
        &self,
        gamma: &Self,
        beta: &Self,
        mean: &[T],
        var: &[T],
        eps: T,
        active: Option<Vec<bool>>,
    ) -> Result<Self> {
        let (v, xhat, inv_std) = {
            let x = self.value();
            let (rows, feats) = x.dims2()?;
            let gv = gamma.value();
            let bv = beta.value();
            if gv.numel() != feats || bv.numel() != feats || mean.len() != feats || var.len() != feats {
                return Err(shape_err("batch_norm", &[x.shape(), gv.shape(), bv.shape()]));
            }
            let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
            let d = x.data();
            let mut xhat = vec![T::zero(); rows * feats];
            let mut out = vec![T::zero(); rows * feats];
            for r in 0..rows {
                for f in 0..feats {
                    let i = r * feats + f;
                    xhat[i] = (d[i] - mean[f]) * inv_std[f];
                    out[i] = gv.data()[f] * xhat[i] + bv.data()[f];
                }
            }
            (Tensor::new([rows, feats], out)?, xhat, inv_std)
        };
        let needs = self.tape.needs(&[self.id, gamma.id, beta.id]);
        let saved = BnSaved { x: self.id, gamma: gamma.id, beta: beta.id, xhat, inv_std, active };
        Ok(self.tape.push(v, Op::BatchNorm(Box::new(saved)), needs))
    }
}
