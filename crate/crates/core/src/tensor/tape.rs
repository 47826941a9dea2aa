use std::cell::{Cell, RefCell};
use std::fmt;

use super::{gemm, split_at_axis, Tensor};
use crate::error::{Error, Result};

/// Recorded primitive application. Operands are node ids on the same tape.
#[derive(Debug)]
pub(crate) enum Op {
    Leaf,
    /// `b` is either the same shape as `a` or a trailing suffix of it.
    Add { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, factor: f64 },
    /// One `m×p · p×q` product per entry of `pairs` (a-matrix, b-matrix).
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        p: usize,
        q: usize,
        pairs: Vec<(usize, usize)>,
    },
    Permute { a: usize, perm: Vec<usize> },
    Reshape { a: usize },
    Concat { parts: Vec<usize>, axis: usize },
    Slice { a: usize, axis: usize, start: usize },
    RepeatAxis { a: usize, axis: usize, count: usize },
    SoftmaxRows { a: usize },
    LayerNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        normed: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu { a: usize },
    MeanAxis { a: usize, axis: usize },
    Sum { a: usize },
    /// Mean over rows of `-Σ target·log softmax(logits)`.
    CrossEntropy {
        logits: usize,
        targets: Vec<f64>,
        probs: Vec<f64>,
    },
}

pub(crate) struct Node {
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<f64>,
    pub(crate) op: Op,
    pub(crate) needs_grad: bool,
}

/// Append-only record of a forward computation.
///
/// Backward runs at most once per tape; a second call is rejected because
/// intermediate gradients are released as the reverse sweep proceeds.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
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

    /// Records `t` as a leaf. It receives a gradient iff `t.requires_grad()`.
    pub fn leaf(&self, t: &Tensor) -> Var<'_> {
        self.push_unchecked(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    /// Records `t` as a leaf that always receives a gradient.
    pub fn param(&self, t: &Tensor) -> Var<'_> {
        self.push_unchecked(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, true)
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        let shape = t.shape().to_vec();
        self.push_unchecked(shape, t.into_data(), Op::Leaf, false)
    }

    fn push_unchecked(&self, shape: Vec<usize>, data: Vec<f64>, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            data,
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn push(
        &self,
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        op: Op,
        inputs: &[usize],
    ) -> Result<Var<'_>> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: name });
        }
        let needs_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|&i| nodes[i].needs_grad)
        };
        Ok(self.push_unchecked(shape, data, op, needs_grad))
    }

    pub(crate) fn with_node<R>(&self, id: usize, f: impl FnOnce(&Node) -> R) -> R {
        f(&self.nodes.borrow()[id])
    }

    pub(crate) fn with_nodes<R>(&self, f: impl FnOnce(&[Node]) -> R) -> R {
        f(&self.nodes.borrow())
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::Contract("loss was recorded on a different tape".into()));
        }
        if self.consumed.get() {
            return Err(Error::Contract(
                "backward already ran on this tape; record a new forward pass".into(),
            ));
        }
        let nodes = self.nodes.borrow();
        if nodes[loss.id].data.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].shape
            )));
        }
        self.consumed.set(true);

        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                grads[id] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            propagate(&nodes, id, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `var`, if it is a leaf that requires one and the loss
    /// depends on it. Leaves unreachable from the loss get `None`.
    pub fn get(&self, var: Var<'_>) -> Option<&[f64]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }

    /// Like [`get`](Self::get) but returns zeros for unreachable leaves.
    pub fn get_or_zeros(&self, var: Var<'_>) -> Vec<f64> {
        match self.get(var) {
            Some(g) => g.to_vec(),
            None => vec![0.0; var.numel()],
        }
    }

    /// Adds the gradient of `var` into `target.grad`.
    pub fn accumulate_into(&self, var: Var<'_>, target: &mut Tensor) -> Result<()> {
        let g = self.get_or_zeros(var);
        target.accumulate_grad(&g)
    }
}

fn add_into(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, delta: Vec<f64>) {
    if !nodes[id].needs_grad {
        return;
    }
    match &mut grads[id] {
        Some(g) => g.iter_mut().zip(&delta).for_each(|(g, d)| *g += d),
        slot @ None => *slot = Some(delta),
    }
}

/// Gradient of a broadcast operand `small` whose values repeat every
/// `small.len()` entries of the output.
fn reduce_to_suffix(full: impl Iterator<Item = f64>, inner: usize) -> Vec<f64> {
    let mut out = vec![0.0; inner];
    for (i, v) in full.enumerate() {
        out[i % inner] += v;
    }
    out
}

fn propagate(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    match &node.op {
        Op::Leaf => {}
        Op::Add { a, b } => {
            add_into(grads, nodes, *a, g.to_vec());
            let nb = nodes[*b].data.len();
            let db = if nb == g.len() {
                g.to_vec()
            } else {
                reduce_to_suffix(g.iter().copied(), nb)
            };
            add_into(grads, nodes, *b, db);
        }
        Op::Mul { a, b } => {
            let (av, bv) = (&nodes[*a].data, &nodes[*b].data);
            let nb = bv.len();
            let da: Vec<f64> = g.iter().enumerate().map(|(i, g)| g * bv[i % nb]).collect();
            add_into(grads, nodes, *a, da);
            let prod = g.iter().zip(av).map(|(g, a)| g * a);
            let db = if nb == g.len() {
                prod.collect()
            } else {
                reduce_to_suffix(prod, nb)
            };
            add_into(grads, nodes, *b, db);
        }
        Op::Scale { a, factor } => {
            add_into(grads, nodes, *a, g.iter().map(|g| g * factor).collect());
        }
        Op::MatMul {
            a,
            b,
            m,
            p,
            q,
            pairs,
        } => {
            let (m, p, q) = (*m, *p, *q);
            if nodes[*a].needs_grad {
                let bv = &nodes[*b].data;
                let mut da = vec![0.0; nodes[*a].data.len()];
                for (out, &(ai, bi)) in pairs.iter().enumerate() {
                    gemm(
                        m,
                        q,
                        p,
                        &g[out * m * q..],
                        false,
                        &bv[bi * p * q..],
                        true,
                        &mut da[ai * m * p..],
                        true,
                    );
                }
                add_into(grads, nodes, *a, da);
            }
            if nodes[*b].needs_grad {
                let av = &nodes[*a].data;
                let mut db = vec![0.0; nodes[*b].data.len()];
                for (out, &(ai, bi)) in pairs.iter().enumerate() {
                    gemm(
                        p,
                        m,
                        q,
                        &av[ai * m * p..],
                        true,
                        &g[out * m * q..],
                        false,
                        &mut db[bi * p * q..],
                        true,
                    );
                }
                add_into(grads, nodes, *b, db);
            }
        }
        Op::Permute { a, perm } => {
            let mut inverse = vec![0; perm.len()];
            for (i, &p) in perm.iter().enumerate() {
                inverse[p] = i;
            }
            let da = permute_data(&node.shape, g, &inverse);
            add_into(grads, nodes, *a, da);
        }
        Op::Reshape { a } => add_into(grads, nodes, *a, g.to_vec()),
        Op::Concat { parts, axis } => {
            let (outer, _, inner) = split_at_axis(&node.shape, *axis);
            let total = node.shape[*axis];
            let mut offset = 0;
            for &part in parts {
                let len = nodes[part].shape[*axis];
                if nodes[part].needs_grad {
                    let mut dp = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let start = (o * total + offset) * inner;
                        dp.extend_from_slice(&g[start..start + len * inner]);
                    }
                    add_into(grads, nodes, part, dp);
                }
                offset += len;
            }
        }
        Op::Slice { a, axis, start } => {
            let src_shape = &nodes[*a].shape;
            let (outer, total, inner) = split_at_axis(src_shape, *axis);
            let len = node.shape[*axis];
            let mut da = vec![0.0; nodes[*a].data.len()];
            for o in 0..outer {
                let dst = (o * total + start) * inner;
                let src = o * len * inner;
                da[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
            }
            add_into(grads, nodes, *a, da);
        }
        Op::RepeatAxis { a, axis, count } => {
            let src = &nodes[*a].shape;
            let outer: usize = src[..*axis].iter().product();
            let inner: usize = src[*axis..].iter().product();
            let mut da = vec![0.0; outer * inner];
            for o in 0..outer {
                for c in 0..*count {
                    let base = (o * count + c) * inner;
                    for i in 0..inner {
                        da[o * inner + i] += g[base + i];
                    }
                }
            }
            add_into(grads, nodes, *a, da);
        }
        Op::SoftmaxRows { a } => {
            let cols = *node.shape.last().unwrap();
            let y = &node.data;
            let mut da = vec![0.0; y.len()];
            for ((dr, yr), gr) in da
                .chunks_mut(cols)
                .zip(y.chunks(cols))
                .zip(g.chunks(cols))
            {
                let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                for ((d, y), g) in dr.iter_mut().zip(yr).zip(gr) {
                    *d = y * (g - dot);
                }
            }
            add_into(grads, nodes, *a, da);
        }
        Op::LayerNorm {
            x,
            gamma,
            beta,
            normed,
            inv_std,
        } => {
            let d = *node.shape.last().unwrap();
            let gam = &nodes[*gamma].data;
            let mut dx = vec![0.0; g.len()];
            let mut dgamma = vec![0.0; d];
            let mut dbeta = vec![0.0; d];
            for (row, ((gr, xr), dxr)) in g
                .chunks(d)
                .zip(normed.chunks(d))
                .zip(dx.chunks_mut(d))
                .enumerate()
            {
                let mut sum_dn = 0.0;
                let mut sum_dn_n = 0.0;
                for j in 0..d {
                    dgamma[j] += gr[j] * xr[j];
                    dbeta[j] += gr[j];
                    let dn = gr[j] * gam[j];
                    sum_dn += dn;
                    sum_dn_n += dn * xr[j];
                }
                let rs = inv_std[row] / d as f64;
                for j in 0..d {
                    let dn = gr[j] * gam[j];
                    dxr[j] = rs * (d as f64 * dn - sum_dn - xr[j] * sum_dn_n);
                }
            }
            add_into(grads, nodes, *x, dx);
            add_into(grads, nodes, *gamma, dgamma);
            add_into(grads, nodes, *beta, dbeta);
        }
        Op::Gelu { a } => {
            let x = &nodes[*a].data;
            let da = x
                .iter()
                .zip(g)
                .map(|(&x, g)| g * (normal_cdf(x) + x * normal_pdf(x)))
                .collect();
            add_into(grads, nodes, *a, da);
        }
        Op::MeanAxis { a, axis } => {
            let (outer, len, inner) = split_at_axis(&nodes[*a].shape, *axis);
            let scale = 1.0 / len as f64;
            let mut da = vec![0.0; outer * len * inner];
            for o in 0..outer {
                for l in 0..len {
                    let dst = (o * len + l) * inner;
                    for i in 0..inner {
                        da[dst + i] = g[o * inner + i] * scale;
                    }
                }
            }
            add_into(grads, nodes, *a, da);
        }
        Op::Sum { a } => {
            add_into(grads, nodes, *a, vec![g[0]; nodes[*a].data.len()]);
        }
        Op::CrossEntropy {
            logits,
            targets,
            probs,
        } => {
            let rows = nodes[*logits].shape[0] as f64;
            let scale = g[0] / rows;
            let dl = probs
                .iter()
                .zip(targets)
                .map(|(p, t)| (p - t) * scale)
                .collect();
            add_into(grads, nodes, *logits, dl);
        }
    }
}

pub(crate) fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub(crate) fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Reorders row-major `data` of `shape` so that output axis `i` is input
/// axis `perm[i]`.
pub(crate) fn permute_data(shape: &[usize], data: &[f64], perm: &[usize]) -> Vec<f64> {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let mut out = Vec::with_capacity(data.len());
    if rank == 0 {
        out.extend_from_slice(data);
        return out;
    }
    // Innermost axis handled as a strided run; odometer over the rest.
    let last = rank - 1;
    let (run, run_stride) = (out_shape[last], strides[last]);
    let mut idx = vec![0usize; last];
    let mut base = 0usize;
    loop {
        if run_stride == 1 {
            out.extend_from_slice(&data[base..base + run]);
        } else {
            out.extend((0..run).map(|r| data[base + r * run_stride]));
        }
        let mut axis = last;
        loop {
            if axis == 0 {
                return out;
            }
            axis -= 1;
            idx[axis] += 1;
            base += strides[axis];
            if idx[axis] < out_shape[axis] {
                break;
            }
            base -= strides[axis] * out_shape[axis];
            idx[axis] = 0;
        }
    }
}
