use std::cell::RefCell;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::array::{axis_blocks, gemm, softmax_along, Array};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Value written into masked positions before a softmax. Finite so that a
/// max-subtracted softmax never evaluates `(-inf) - (-inf)`.
pub const MASK_FILL: f64 = f64::MIN;

/// Boolean keep-mask; `true` marks positions that stay visible.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    shape: Vec<usize>,
    keep: Vec<bool>,
}

impl Mask {
    pub fn new(shape: Vec<usize>, keep: Vec<bool>) -> Result<Self> {
        if shape.iter().product::<usize>() != keep.len() {
            return Err(Error::shape("Mask::new", &shape, &[keep.len()]));
        }
        Ok(Self { shape, keep })
    }

    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> bool) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            keep: (0..numel).map(f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }
}

/// Dropout setting for one forward pass. Probability 0 is evaluation mode.
pub struct Dropout {
    p: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(p: f64, seed: u64) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout probability {p} outside [0, 1)");
        Self {
            p,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn eval() -> Self {
        Self::new(0.0, 0)
    }

    pub fn p(&self) -> f64 {
        self.p
    }
}

enum Op {
    Leaf,
    Param,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    MulConst(usize, Arc<Array>),
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Narrow { input: usize, axis: usize, start: usize },
    Concat { inputs: Vec<usize>, axis: usize },
    Embedding { table: usize, ids: Vec<usize> },
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    Softmax { input: usize, axis: usize },
    MaskedFill { input: usize, keep: Arc<Vec<bool>> },
    LayerNorm { input: usize, gain: usize, bias: usize, normed: Vec<f64>, inv_std: Vec<f64> },
    CrossEntropy { logits: usize, targets: Vec<usize>, ignore: usize, probs: Vec<f64>, count: usize },
    Sum(usize),
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf | Param => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) => vec![*a, *b],
            Scale(a, _) | MulConst(a, _) | Transpose(a) | Reshape(a) | Tanh(a) | Sigmoid(a) | Relu(a) | Sum(a) => {
                vec![*a]
            }
            Narrow { input, .. } | Softmax { input, .. } | MaskedFill { input, .. } => vec![*input],
            Concat { inputs, .. } => inputs.clone(),
            Embedding { table, .. } => vec![*table],
            LayerNorm { input, gain, bias, .. } => vec![*input, *gain, *bias],
            CrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

struct Node {
    value: Arc<Array>,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of forward operations.
///
/// Nodes are appended as operations run, so every node's inputs precede it.
/// A tape is single-threaded; build one per forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    bound: RefCell<Vec<(ParamId, usize)>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Tensor<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Tensor<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    if a.len() >= b.len() && a.ends_with(b) {
        Some(a.to_vec())
    } else if b.ends_with(a) {
        Some(b.to_vec())
    } else {
        None
    }
}

/// Sums a broadcast gradient back down to an operand with `n` elements.
fn reduce_to(grad: &[f64], n: usize, shape: &[usize]) -> Array {
    if grad.len() == n {
        return Array::from_parts(shape.to_vec(), grad.to_vec());
    }
    let mut out = vec![0.0; n];
    for chunk in grad.chunks_exact(n) {
        for (o, g) in out.iter_mut().zip(chunk) {
            *o += g;
        }
    }
    Array::from_parts(shape.to_vec(), out)
}

enum MatMulLayout {
    /// `b` is a single matrix shared by every leading index of `a`.
    SharedRhs { rows: usize },
    /// `a` is a single matrix shared by every leading index of `b`.
    SharedLhs { batch: usize },
    Batched { batch: usize },
}

struct MatMulDims {
    m: usize,
    k: usize,
    n: usize,
    layout: MatMulLayout,
    out_shape: Vec<usize>,
}

fn matmul_dims(a: &[usize], b: &[usize]) -> Result<MatMulDims> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::shape("matmul", a, b));
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (kb, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != kb {
        return Err(Error::shape("matmul", a, b));
    }
    let lead_a = &a[..a.len() - 2];
    let lead_b = &b[..b.len() - 2];
    let (layout, lead) = if lead_b.is_empty() {
        let rows = a[..a.len() - 1].iter().product();
        (MatMulLayout::SharedRhs { rows }, lead_a)
    } else if lead_a.is_empty() {
        (MatMulLayout::SharedLhs { batch: lead_b.iter().product() }, lead_b)
    } else if lead_a == lead_b {
        (MatMulLayout::Batched { batch: lead_a.iter().product() }, lead_a)
    } else {
        return Err(Error::shape("matmul", a, b));
    };
    let mut out_shape = lead.to_vec();
    out_shape.extend([m, n]);
    Ok(MatMulDims { m, k, n, layout, out_shape })
}

fn transpose_last2(x: &Array) -> Array {
    let r = x.rank();
    let (rows, cols) = (x.shape()[r - 2], x.shape()[r - 1]);
    let mut shape = x.shape().to_vec();
    shape.swap(r - 2, r - 1);
    let mut out = vec![0.0; x.numel()];
    for (b, block) in x.data().chunks_exact(rows * cols).enumerate() {
        let dst = &mut out[b * rows * cols..(b + 1) * rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                dst[j * rows + i] = block[i * cols + j];
            }
        }
    }
    Array::from_parts(shape, out)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records an input tensor.
    pub fn leaf(&self, value: Array, requires_grad: bool) -> Tensor<'_> {
        self.push_node(Arc::new(value), Op::Leaf, requires_grad)
    }

    pub fn constant(&self, value: Array) -> Tensor<'_> {
        self.leaf(value, false)
    }

    /// Binds a parameter onto the tape; repeated calls return the same node.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Tensor<'_> {
        if let Some(&(_, node)) = self.bound.borrow().iter().find(|(p, _)| *p == id) {
            return Tensor { tape: self, id: node };
        }
        let t = self.push_node(store.shared(id), Op::Param, true);
        self.bound.borrow_mut().push((id, t.id));
        t
    }

    fn push_node(&self, value: Arc<Array>, op: Op, requires_grad: bool) -> Tensor<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, requires_grad });
        Tensor {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn push(&self, value: Array, op: Op, name: &'static str) -> Result<Tensor<'_>> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            op.inputs().iter().any(|&i| nodes[i].requires_grad)
        };
        Ok(self.push_node(Arc::new(value), op, requires_grad))
    }

    fn value_of(&self, id: usize) -> Arc<Array> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    /// Concatenates tensors along `axis`; all other dimensions must agree.
    pub fn concat<'t>(&'t self, parts: &[Tensor<'t>], axis: usize) -> Result<Tensor<'t>> {
        if parts.is_empty() {
            return Err(Error::invalid("concat of zero tensors"));
        }
        let values: Vec<Arc<Array>> = parts.iter().map(|p| p.value()).collect();
        let base = values[0].shape().to_vec();
        if axis >= base.len() {
            return Err(Error::invalid(format!("concat axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for v in &values {
            let s = v.shape();
            let same_rank = s.len() == base.len();
            if !same_rank || s.iter().zip(&base).enumerate().any(|(d, (x, y))| d != axis && x != y) {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_blocks(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for v in &values {
                let block = v.shape()[axis] * inner;
                out.extend_from_slice(&v.data()[o * block..(o + 1) * block]);
            }
        }
        self.push(
            Array::from_parts(shape, out),
            Op::Concat {
                inputs: parts.iter().map(|p| p.id).collect(),
                axis,
            },
            "concat",
        )
    }

    /// Stacks equal-shaped tensors along a new axis.
    pub fn stack<'t>(&'t self, parts: &[Tensor<'t>], axis: usize) -> Result<Tensor<'t>> {
        let expanded = parts
            .iter()
            .map(|p| {
                let mut s = p.shape();
                if axis > s.len() {
                    return Err(Error::invalid(format!("stack axis {axis} out of range for {s:?}")));
                }
                s.insert(axis, 1);
                p.reshape(&s)
            })
            .collect::<Result<Vec<_>>>()?;
        self.concat(&expanded, axis)
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Tensor<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::NotScalar(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Array>> = Vec::with_capacity(loss.id + 1);
        grads.resize_with(loss.id + 1, || None);
        grads[loss.id] = Some(Array::full(root.value.shape(), 1.0));

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            match node.op {
                Op::Leaf | Op::Param => grads[id] = Some(g),
                _ => propagate(&nodes, id, &g, &mut grads)?,
            }
        }
        let params = self.bound.borrow().clone();
        Ok(Gradients { grads, params })
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Array>], id: usize, g: Array) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn propagate(nodes: &[Node], id: usize, g: &Array, grads: &mut [Option<Array>]) -> Result<()> {
    let node = &nodes[id];
    let out = &node.value;
    let val = |i: usize| &nodes[i].value;
    let wants = |i: usize| nodes[i].requires_grad;
    match &node.op {
        Op::Leaf | Op::Param => {}
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
            if wants(*a) {
                let ga = reduce_to(g.data(), val(*a).numel(), val(*a).shape());
                accumulate(nodes, grads, *a, ga);
            }
            if wants(*b) {
                let mut gb = reduce_to(g.data(), val(*b).numel(), val(*b).shape());
                if sign < 0.0 {
                    gb.data_mut().iter_mut().for_each(|x| *x = -*x);
                }
                accumulate(nodes, grads, *b, gb);
            }
        }
        Op::Mul(a, b) => {
            for (this, other) in [(*a, *b), (*b, *a)] {
                if !wants(this) {
                    continue;
                }
                let ov = val(other).data();
                let prod: Vec<f64> = g
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, gi)| gi * ov[i % ov.len()])
                    .collect();
                let gt = reduce_to(&prod, val(this).numel(), val(this).shape());
                accumulate(nodes, grads, this, gt);
            }
        }
        Op::Scale(a, s) => accumulate(nodes, grads, *a, g.map(|x| x * s)),
        Op::MulConst(a, c) => {
            let data = g.data().iter().zip(c.data()).map(|(x, y)| x * y).collect();
            accumulate(nodes, grads, *a, Array::from_parts(g.shape().to_vec(), data));
        }
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let d = matmul_dims(av.shape(), bv.shape())?;
            let (m, k, n) = (d.m, d.k, d.n);
            let (wa, wb) = (wants(*a), wants(*b));
            let mut ga = wa.then(|| vec![0.0; av.numel()]);
            let mut gb = wb.then(|| vec![0.0; bv.numel()]);
            match d.layout {
                MatMulLayout::SharedRhs { rows } => {
                    if let Some(ga) = ga.as_mut() {
                        gemm(rows, n, k, g.data(), false, bv.data(), true, ga, false);
                    }
                    if let Some(gb) = gb.as_mut() {
                        gemm(k, rows, n, av.data(), true, g.data(), false, gb, false);
                    }
                }
                MatMulLayout::SharedLhs { batch } => {
                    for bi in 0..batch {
                        let gs = &g.data()[bi * m * n..(bi + 1) * m * n];
                        let bs = &bv.data()[bi * k * n..(bi + 1) * k * n];
                        if let Some(ga) = ga.as_mut() {
                            gemm(m, n, k, gs, false, bs, true, ga, true);
                        }
                        if let Some(gb) = gb.as_mut() {
                            let dst = &mut gb[bi * k * n..(bi + 1) * k * n];
                            gemm(k, m, n, av.data(), true, gs, false, dst, false);
                        }
                    }
                }
                MatMulLayout::Batched { batch } => {
                    for bi in 0..batch {
                        let gs = &g.data()[bi * m * n..(bi + 1) * m * n];
                        if let Some(ga) = ga.as_mut() {
                            let bs = &bv.data()[bi * k * n..(bi + 1) * k * n];
                            let dst = &mut ga[bi * m * k..(bi + 1) * m * k];
                            gemm(m, n, k, gs, false, bs, true, dst, false);
                        }
                        if let Some(gb) = gb.as_mut() {
                            let as_ = &av.data()[bi * m * k..(bi + 1) * m * k];
                            let dst = &mut gb[bi * k * n..(bi + 1) * k * n];
                            gemm(k, m, n, as_, true, gs, false, dst, false);
                        }
                    }
                }
            }
            if let Some(ga) = ga {
                accumulate(nodes, grads, *a, Array::from_parts(av.shape().to_vec(), ga));
            }
            if let Some(gb) = gb {
                accumulate(nodes, grads, *b, Array::from_parts(bv.shape().to_vec(), gb));
            }
        }
        Op::Transpose(a) => accumulate(nodes, grads, *a, transpose_last2(g)),
        Op::Reshape(a) => {
            let ga = Array::from_parts(val(*a).shape().to_vec(), g.data().to_vec());
            accumulate(nodes, grads, *a, ga);
        }
        Op::Narrow { input, axis, start } => {
            let in_shape = val(*input).shape();
            let (outer, len_in, inner) = axis_blocks(in_shape, *axis);
            let len_out = g.shape()[*axis];
            let mut ga = vec![0.0; val(*input).numel()];
            for o in 0..outer {
                let src = &g.data()[o * len_out * inner..(o + 1) * len_out * inner];
                let dst_start = o * len_in * inner + start * inner;
                ga[dst_start..dst_start + len_out * inner].copy_from_slice(src);
            }
            accumulate(nodes, grads, *input, Array::from_parts(in_shape.to_vec(), ga));
        }
        Op::Concat { inputs, axis } => {
            let (outer, total, inner) = axis_blocks(g.shape(), *axis);
            let mut offset = 0;
            for &inp in inputs {
                let shape = val(inp).shape();
                let len = shape[*axis];
                if wants(inp) {
                    let mut part = Vec::with_capacity(val(inp).numel());
                    for o in 0..outer {
                        let s = o * total * inner + offset * inner;
                        part.extend_from_slice(&g.data()[s..s + len * inner]);
                    }
                    accumulate(nodes, grads, inp, Array::from_parts(shape.to_vec(), part));
                }
                offset += len;
            }
        }
        Op::Embedding { table, ids } => {
            let tv = val(*table);
            let dim = tv.shape()[1];
            let mut gt = vec![0.0; tv.numel()];
            for (row, &tok) in ids.iter().enumerate() {
                let src = &g.data()[row * dim..(row + 1) * dim];
                for (d, s) in gt[tok * dim..(tok + 1) * dim].iter_mut().zip(src) {
                    *d += s;
                }
            }
            accumulate(nodes, grads, *table, Array::from_parts(tv.shape().to_vec(), gt));
        }
        Op::Tanh(a) => {
            let data = g.data().iter().zip(out.data()).map(|(gi, y)| gi * (1.0 - y * y)).collect();
            accumulate(nodes, grads, *a, Array::from_parts(g.shape().to_vec(), data));
        }
        Op::Sigmoid(a) => {
            let data = g.data().iter().zip(out.data()).map(|(gi, y)| gi * y * (1.0 - y)).collect();
            accumulate(nodes, grads, *a, Array::from_parts(g.shape().to_vec(), data));
        }
        Op::Relu(a) => {
            let data = g
                .data()
                .iter()
                .zip(val(*a).data())
                .map(|(gi, x)| if *x > 0.0 { *gi } else { 0.0 })
                .collect();
            accumulate(nodes, grads, *a, Array::from_parts(g.shape().to_vec(), data));
        }
        Op::Softmax { input, axis } => {
            let (outer, len, inner) = axis_blocks(out.shape(), *axis);
            let (y, gd) = (out.data(), g.data());
            let mut ga = vec![0.0; y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let base = o * len * inner + i;
                    let dot: f64 = (0..len).map(|j| gd[base + j * inner] * y[base + j * inner]).sum();
                    for j in 0..len {
                        let p = base + j * inner;
                        ga[p] = y[p] * (gd[p] - dot);
                    }
                }
            }
            accumulate(nodes, grads, *input, Array::from_parts(out.shape().to_vec(), ga));
        }
        Op::MaskedFill { input, keep } => {
            let data = g
                .data()
                .iter()
                .enumerate()
                .map(|(i, gi)| if keep[i % keep.len()] { *gi } else { 0.0 })
                .collect();
            accumulate(nodes, grads, *input, Array::from_parts(g.shape().to_vec(), data));
        }
        Op::LayerNorm { input, gain, bias, normed, inv_std } => {
            let dim = *out.shape().last().unwrap();
            let gamma = val(*gain).data();
            let mut gx = vec![0.0; g.numel()];
            let mut ggain = vec![0.0; dim];
            let mut gbias = vec![0.0; dim];
            for (r, (grow, xhat)) in g.data().chunks_exact(dim).zip(normed.chunks_exact(dim)).enumerate() {
                let mut mean_gg = 0.0;
                let mut mean_ggx = 0.0;
                for j in 0..dim {
                    let gg = grow[j] * gamma[j];
                    mean_gg += gg;
                    mean_ggx += gg * xhat[j];
                    ggain[j] += grow[j] * xhat[j];
                    gbias[j] += grow[j];
                }
                mean_gg /= dim as f64;
                mean_ggx /= dim as f64;
                let dst = &mut gx[r * dim..(r + 1) * dim];
                for j in 0..dim {
                    dst[j] = inv_std[r] * (grow[j] * gamma[j] - mean_gg - xhat[j] * mean_ggx);
                }
            }
            accumulate(nodes, grads, *input, Array::from_parts(g.shape().to_vec(), gx));
            accumulate(nodes, grads, *gain, Array::from_parts(vec![dim], ggain));
            accumulate(nodes, grads, *bias, Array::from_parts(vec![dim], gbias));
        }
        Op::CrossEntropy { logits, targets, ignore, probs, count } => {
            let shape = val(*logits).shape();
            let classes = *shape.last().unwrap();
            let scale = g.item() / *count as f64;
            let mut gl = vec![0.0; probs.len()];
            for (r, &t) in targets.iter().enumerate() {
                if t == *ignore {
                    continue;
                }
                let row = &probs[r * classes..(r + 1) * classes];
                let dst = &mut gl[r * classes..(r + 1) * classes];
                for (d, p) in dst.iter_mut().zip(row) {
                    *d = p * scale;
                }
                dst[t] -= scale;
            }
            accumulate(nodes, grads, *logits, Array::from_parts(shape.to_vec(), gl));
        }
        Op::Sum(a) => {
            let ga = Array::full(val(*a).shape(), g.item());
            accumulate(nodes, grads, *a, ga);
        }
    }
    Ok(())
}

/// Gradients produced by [`Tape::backward`] for every leaf that requires one.
pub struct Gradients {
    grads: Vec<Option<Array>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    pub fn get(&self, t: &Tensor<'_>) -> Option<&Array> {
        self.grads.get(t.id).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Array> {
        let (_, node) = self.params.iter().find(|(p, _)| *p == id)?;
        self.grads.get(*node).and_then(Option::as_ref)
    }

    /// Adds every bound parameter's gradient into the store's buffers.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(id, node) in &self.params {
            if let Some(Some(g)) = self.grads.get(node) {
                store.grad_mut(id).add_assign(g);
            }
        }
    }
}

impl<'t> Tensor<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Arc<Array> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn elementwise(
        &self,
        other: &Tensor<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: fn(usize, usize) -> Op,
    ) -> Result<Tensor<'t>> {
        let (a, b) = (self.value(), other.value());
        let shape = broadcast_shape(a.shape(), b.shape()).ok_or_else(|| Error::shape(name, a.shape(), b.shape()))?;
        let numel: usize = shape.iter().product();
        let (ad, bd) = (a.data(), b.data());
        let data = (0..numel).map(|i| f(ad[i % ad.len()], bd[i % bd.len()])).collect();
        self.tape.push(Array::from_parts(shape, data), op(self.id, other.id), name)
    }

    /// Elementwise sum; the shorter shape must be a suffix of the longer one.
    pub fn add(&self, other: &Tensor<'t>) -> Result<Tensor<'t>> {
        self.elementwise(other, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&self, other: &Tensor<'t>) -> Result<Tensor<'t>> {
        self.elementwise(other, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&self, other: &Tensor<'t>) -> Result<Tensor<'t>> {
        self.elementwise(other, "mul", |x, y| x * y, Op::Mul)
    }

    pub fn scale(&self, s: f64) -> Result<Tensor<'t>> {
        let v = self.value().map(|x| x * s);
        self.tape.push(v, Op::Scale(self.id, s), "scale")
    }

    /// Multiplies by a same-shaped constant that takes no gradient.
    pub fn mul_const(&self, c: Arc<Array>) -> Result<Tensor<'t>> {
        let a = self.value();
        if a.shape() != c.shape() {
            return Err(Error::shape("mul_const", a.shape(), c.shape()));
        }
        let data = a.data().iter().zip(c.data()).map(|(x, y)| x * y).collect();
        self.tape.push(Array::from_parts(a.shape().to_vec(), data), Op::MulConst(self.id, c), "mul_const")
    }

    /// Matrix product over the last two dimensions. Leading dimensions must
    /// match, or one side must be a plain matrix shared across them.
    pub fn matmul(&self, other: &Tensor<'t>) -> Result<Tensor<'t>> {
        let (a, b) = (self.value(), other.value());
        let d = matmul_dims(a.shape(), b.shape())?;
        let (m, k, n) = (d.m, d.k, d.n);
        let mut out = vec![0.0; d.out_shape.iter().product()];
        match d.layout {
            MatMulLayout::SharedRhs { rows } => gemm(rows, k, n, a.data(), false, b.data(), false, &mut out, false),
            MatMulLayout::SharedLhs { batch } => {
                for bi in 0..batch {
                    let bs = &b.data()[bi * k * n..(bi + 1) * k * n];
                    gemm(m, k, n, a.data(), false, bs, false, &mut out[bi * m * n..(bi + 1) * m * n], false);
                }
            }
            MatMulLayout::Batched { batch } => {
                for bi in 0..batch {
                    let as_ = &a.data()[bi * m * k..(bi + 1) * m * k];
                    let bs = &b.data()[bi * k * n..(bi + 1) * k * n];
                    gemm(m, k, n, as_, false, bs, false, &mut out[bi * m * n..(bi + 1) * m * n], false);
                }
            }
        }
        self.tape.push(Array::from_parts(d.out_shape, out), Op::MatMul(self.id, other.id), "matmul")
    }

    /// Swaps the last two dimensions.
    pub fn transpose(&self) -> Result<Tensor<'t>> {
        let a = self.value();
        if a.rank() < 2 {
            return Err(Error::shape("transpose", a.shape(), &[]));
        }
        self.tape.push(transpose_last2(&a), Op::Transpose(self.id), "transpose")
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<'t>> {
        let v = self.value().reshape(shape)?;
        self.tape.push(v, Op::Reshape(self.id), "reshape")
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<'t>> {
        let a = self.value();
        if axis >= a.rank() || len == 0 || start + len > a.shape()[axis] {
            return Err(Error::invalid(format!(
                "narrow({axis}, {start}, {len}) out of range for {:?}",
                a.shape()
            )));
        }
        let (outer, len_in, inner) = axis_blocks(a.shape(), axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = o * len_in * inner + start * inner;
            out.extend_from_slice(&a.data()[s..s + len * inner]);
        }
        let mut shape = a.shape().to_vec();
        shape[axis] = len;
        self.tape.push(Array::from_parts(shape, out), Op::Narrow { input: self.id, axis, start }, "narrow")
    }

    /// Selects index `i` along `axis`, dropping that dimension.
    pub fn select(&self, axis: usize, i: usize) -> Result<Tensor<'t>> {
        let mut shape = self.shape();
        let t = self.narrow(axis, i, 1)?;
        shape.remove(axis);
        t.reshape(&shape)
    }

    /// Gathers rows of a `[vocab, dim]` table; output shape is `ids_shape + [dim]`.
    pub fn embedding(&self, ids: &[usize], ids_shape: &[usize]) -> Result<Tensor<'t>> {
        let table = self.value();
        if table.rank() != 2 {
            return Err(Error::shape("embedding", table.shape(), ids_shape));
        }
        if ids_shape.iter().product::<usize>() != ids.len() {
            return Err(Error::shape("embedding", ids_shape, &[ids.len()]));
        }
        let (vocab, dim) = (table.shape()[0], table.shape()[1]);
        let mut out = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= vocab {
                return Err(Error::invalid(format!("token id {id} outside vocabulary of {vocab}")));
            }
            out.extend_from_slice(&table.data()[id * dim..(id + 1) * dim]);
        }
        let mut shape = ids_shape.to_vec();
        shape.push(dim);
        self.tape.push(
            Array::from_parts(shape, out),
            Op::Embedding {
                table: self.id,
                ids: ids.to_vec(),
            },
            "embedding",
        )
    }

    pub fn tanh(&self) -> Result<Tensor<'t>> {
        self.tape.push(self.value().map(f64::tanh), Op::Tanh(self.id), "tanh")
    }

    pub fn sigmoid(&self) -> Result<Tensor<'t>> {
        let v = self.value().map(|x| 1.0 / (1.0 + (-x).exp()));
        self.tape.push(v, Op::Sigmoid(self.id), "sigmoid")
    }

    pub fn relu(&self) -> Result<Tensor<'t>> {
        self.tape.push(self.value().map(|x| x.max(0.0)), Op::Relu(self.id), "relu")
    }

    pub fn softmax(&self, axis: usize) -> Result<Tensor<'t>> {
        let v = softmax_along(&self.value(), axis)?;
        self.tape.push(v, Op::Softmax { input: self.id, axis }, "softmax")
    }

    /// Replaces positions where `mask` is false with [`MASK_FILL`].
    pub fn masked_fill(&self, mask: &Mask) -> Result<Tensor<'t>> {
        let a = self.value();
        if !a.shape().ends_with(mask.shape()) {
            return Err(Error::shape("masked_fill", a.shape(), mask.shape()));
        }
        let keep = &mask.keep;
        let data = a
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| if keep[i % keep.len()] { x } else { MASK_FILL })
            .collect();
        self.tape.push(
            Array::from_parts(a.shape().to_vec(), data),
            Op::MaskedFill {
                input: self.id,
                keep: Arc::new(keep.clone()),
            },
            "masked_fill",
        )
    }

    /// Normalises each last-dimension slice to zero mean and unit variance,
    /// then applies `gain` and `bias`.
    pub fn layer_norm(&self, gain: &Tensor<'t>, bias: &Tensor<'t>, eps: f64) -> Result<Tensor<'t>> {
        let x = self.value();
        let dim = *x.shape().last().ok_or_else(|| Error::shape("layer_norm", x.shape(), &[]))?;
        let (gv, bv) = (gain.value(), bias.value());
        if gv.shape() != [dim] || bv.shape() != [dim] {
            return Err(Error::shape("layer_norm", x.shape(), gv.shape()));
        }
        let rows = x.numel() / dim;
        let mut normed = vec![0.0; x.numel()];
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = vec![0.0; x.numel()];
        for (r, row) in x.data().chunks_exact(dim).enumerate() {
            let mean = row.iter().sum::<f64>() / dim as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / dim as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std.push(inv);
            for j in 0..dim {
                let xh = (row[j] - mean) * inv;
                normed[r * dim + j] = xh;
                out[r * dim + j] = xh * gv.data()[j] + bv.data()[j];
            }
        }
        self.tape.push(
            Array::from_parts(x.shape().to_vec(), out),
            Op::LayerNorm {
                input: self.id,
                gain: gain.id,
                bias: bias.id,
                normed,
                inv_std,
            },
            "layer_norm",
        )
    }

    /// Mean cross-entropy of `[..., classes]` logits against integer targets,
    /// skipping rows whose target equals `ignore`.
    pub fn cross_entropy(&self, targets: &[usize], ignore: usize) -> Result<Tensor<'t>> {
        let logits = self.value();
        let classes = *logits.shape().last().ok_or_else(|| Error::shape("cross_entropy", logits.shape(), &[]))?;
        let rows = logits.numel() / classes;
        if rows != targets.len() {
            return Err(Error::shape("cross_entropy", logits.shape(), &[targets.len()]));
        }
        let mut probs = vec![0.0; logits.numel()];
        let mut total = 0.0;
        let mut count = 0;
        for (r, row) in logits.data().chunks_exact(classes).enumerate() {
            let t = targets[r];
            if t == ignore {
                continue;
            }
            if t >= classes {
                return Err(Error::invalid(format!("target {t} outside {classes} classes")));
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = z.ln() + max;
            for (p, v) in probs[r * classes..(r + 1) * classes].iter_mut().zip(row) {
                *p = (v - log_z).exp();
            }
            total += log_z - row[t];
            count += 1;
        }
        if count == 0 {
            return Err(Error::invalid("cross_entropy with every target ignored"));
        }
        self.tape.push(
            Array::scalar(total / count as f64),
            Op::CrossEntropy {
                logits: self.id,
                targets: targets.to_vec(),
                ignore,
                probs,
                count,
            },
            "cross_entropy",
        )
    }

    pub fn sum(&self) -> Result<Tensor<'t>> {
        let v = self.value().sum();
        self.tape.push(Array::scalar(v), Op::Sum(self.id), "sum")
    }

    /// Inverted dropout: zeroes each element with probability `p` and scales
    /// survivors by `1 / (1 - p)`. Identity when `p == 0`.
    pub fn dropout(&self, dropout: &mut Dropout) -> Result<Tensor<'t>> {
        if dropout.p == 0.0 {
            return Ok(*self);
        }
        let keep = 1.0 - dropout.p;
        let shape = self.shape();
        let mask = Array::from_fn(&shape, |_| {
            if dropout.rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        self.mul_const(Arc::new(mask))
    }
}
