use super::tape::{normal_cdf, permute_data, Op};
use super::{gemm, split_at_axis, Tape, Tensor, Var};
use crate::error::{shape_err, Error, Result};

/// Variance floor used by the transformer layer norms.
pub const LAYER_NORM_EPS: f64 = 1e-5;

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.with_node(self.id, |n| n.shape.clone())
    }

    pub fn numel(&self) -> usize {
        self.tape.with_node(self.id, |n| n.data.len())
    }

    /// Copy of the recorded value.
    pub fn value(&self) -> Tensor {
        self.tape
            .with_node(self.id, |n| Tensor::new(n.shape.clone(), n.data.clone()))
            .expect("tape values are validated on push")
    }

    pub fn item(&self) -> f64 {
        self.tape.with_node(self.id, |n| {
            assert_eq!(n.data.len(), 1, "item() on shape {:?}", n.shape);
            n.data[0]
        })
    }

    fn same_tape(&self, other: &Var<'_>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Contract("operands recorded on different tapes".into()))
        }
    }

    fn broadcast_binary(
        self,
        other: Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: fn(usize, usize) -> Op,
    ) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let (shape, data) = self.tape.with_nodes(|nodes| {
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            let suffix = b.shape.len() <= a.shape.len()
                && a.shape[a.shape.len() - b.shape.len()..] == b.shape[..];
            if !suffix {
                return shape_err(format!(
                    "{name}: shape {:?} does not broadcast onto {:?}",
                    b.shape, a.shape
                ));
            }
            let nb = b.data.len();
            let data = a
                .data
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, b.data[i % nb]))
                .collect();
            Ok((a.shape.clone(), data))
        })?;
        self.tape
            .push(name, shape, data, op(self.id, other.id), &[self.id, other.id])
    }

    /// Elementwise sum; `other` may be a trailing-suffix shape broadcast over
    /// the leading axes of `self`.
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.broadcast_binary(other, "add", |a, b| a + b, |a, b| Op::Add { a, b })
    }

    /// Elementwise product with the same broadcasting rule as [`add`](Self::add).
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.broadcast_binary(other, "mul", |a, b| a * b, |a, b| Op::Mul { a, b })
    }

    pub fn scale(self, factor: f64) -> Result<Var<'t>> {
        let (shape, data) = self.tape.with_node(self.id, |n| {
            (n.shape.clone(), n.data.iter().map(|x| x * factor).collect())
        });
        self.tape
            .push("scale", shape, data, Op::Scale { a: self.id, factor }, &[self.id])
    }

    /// Batched matrix product over the last two axes. Leading batch axes
    /// broadcast numpy-style.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(&other)?;
        let (shape, data, op) = self.tape.with_nodes(|nodes| {
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            let (ra, rb) = (a.shape.len(), b.shape.len());
            if ra < 2 || rb < 2 || a.shape[ra - 1] != b.shape[rb - 2] {
                return shape_err(format!(
                    "matmul: cannot multiply {:?} by {:?}",
                    a.shape, b.shape
                ));
            }
            let (m, p, q) = (a.shape[ra - 2], a.shape[ra - 1], b.shape[rb - 1]);
            let a_batch = &a.shape[..ra - 2];
            let b_batch = &b.shape[..rb - 2];

            // Plain weight matrix on the right: fold all batch axes into rows.
            if rb == 2 {
                let rows = a.data.len() / p;
                let mut c = vec![0.0; rows * q];
                gemm(rows, p, q, &a.data, false, &b.data, false, &mut c, false);
                let mut shape = a.shape.clone();
                shape[ra - 1] = q;
                let op = Op::MatMul {
                    a: self.id,
                    b: other.id,
                    m: rows,
                    p,
                    q,
                    pairs: vec![(0, 0)],
                };
                return Ok((shape, c, op));
            }

            let batch = broadcast_shape(a_batch, b_batch).ok_or_else(|| {
                Error::Shape(format!(
                    "matmul: batch axes of {:?} and {:?} do not broadcast",
                    a.shape, b.shape
                ))
            })?;
            let count: usize = batch.iter().product();
            let pairs: Vec<(usize, usize)> = (0..count)
                .map(|i| {
                    let idx = unravel(i, &batch);
                    (
                        broadcast_offset(&idx, a_batch),
                        broadcast_offset(&idx, b_batch),
                    )
                })
                .collect();
            let mut c = vec![0.0; count * m * q];
            for (out, &(ai, bi)) in pairs.iter().enumerate() {
                gemm(
                    m,
                    p,
                    q,
                    &a.data[ai * m * p..],
                    false,
                    &b.data[bi * p * q..],
                    false,
                    &mut c[out * m * q..],
                    false,
                );
            }
            let mut shape = batch;
            shape.extend([m, q]);
            let op = Op::MatMul {
                a: self.id,
                b: other.id,
                m,
                p,
                q,
                pairs,
            };
            Ok((shape, c, op))
        })?;
        self.tape
            .push("matmul", shape, data, op, &[self.id, other.id])
    }

    /// General axis permutation: output axis `i` is input axis `perm[i]`.
    pub fn permute(self, perm: &[usize]) -> Result<Var<'t>> {
        let (shape, data) = self.tape.with_node(self.id, |n| {
            let mut seen = vec![false; n.shape.len()];
            if perm.len() != n.shape.len()
                || perm.iter().any(|&p| p >= seen.len() || std::mem::replace(&mut seen[p], true))
            {
                return Err(Error::Index(format!(
                    "permute: {perm:?} is not a permutation of {} axes",
                    n.shape.len()
                )));
            }
            let shape = perm.iter().map(|&p| n.shape[p]).collect();
            Ok((shape, permute_data(&n.shape, &n.data, perm)))
        })?;
        let op = Op::Permute {
            a: self.id,
            perm: perm.to_vec(),
        };
        self.tape.push("permute", shape, data, op, &[self.id])
    }

    /// Swaps the last two axes.
    pub fn transpose(self) -> Result<Var<'t>> {
        let rank = self.shape().len();
        if rank < 2 {
            return shape_err(format!("transpose needs rank >= 2, got {rank}"));
        }
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(rank - 2, rank - 1);
        self.permute(&perm)
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let data = self.tape.with_node(self.id, |n| {
            let numel: usize = shape.iter().product();
            if numel != n.data.len() || shape.contains(&0) {
                return shape_err(format!("reshape: {:?} into {shape:?}", n.shape));
            }
            Ok(n.data.clone())
        })?;
        self.tape
            .push("reshape", shape.to_vec(), data, Op::Reshape { a: self.id }, &[self.id])
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(self, axis: usize, start: usize, len: usize) -> Result<Var<'t>> {
        let (shape, data) = self.tape.with_node(self.id, |n| {
            if axis >= n.shape.len() {
                return Err(Error::Index(format!("slice axis {axis} on {:?}", n.shape)));
            }
            if len == 0 || start + len > n.shape[axis] {
                return Err(Error::Index(format!(
                    "slice {start}..{} out of range for axis {axis} of {:?}",
                    start + len,
                    n.shape
                )));
            }
            let (outer, total, inner) = split_at_axis(&n.shape, axis);
            let mut data = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let s = (o * total + start) * inner;
                data.extend_from_slice(&n.data[s..s + len * inner]);
            }
            let mut shape = n.shape.clone();
            shape[axis] = len;
            Ok((shape, data))
        })?;
        let op = Op::Slice {
            a: self.id,
            axis,
            start,
        };
        self.tape.push("slice", shape, data, op, &[self.id])
    }

    /// Inserts a new axis at position `axis` holding `count` copies.
    pub fn repeat_axis(self, axis: usize, count: usize) -> Result<Var<'t>> {
        let (shape, data) = self.tape.with_node(self.id, |n| {
            if axis > n.shape.len() {
                return Err(Error::Index(format!("repeat axis {axis} on {:?}", n.shape)));
            }
            if count == 0 {
                return shape_err("repeat count must be positive");
            }
            let outer: usize = n.shape[..axis].iter().product();
            let inner: usize = n.shape[axis..].iter().product();
            let mut data = Vec::with_capacity(outer * count * inner);
            for o in 0..outer {
                let chunk = &n.data[o * inner..(o + 1) * inner];
                for _ in 0..count {
                    data.extend_from_slice(chunk);
                }
            }
            let mut shape = n.shape.clone();
            shape.insert(axis, count);
            Ok((shape, data))
        })?;
        let op = Op::RepeatAxis {
            a: self.id,
            axis,
            count,
        };
        self.tape.push("repeat_axis", shape, data, op, &[self.id])
    }

    /// Softmax over the last axis, stabilised by subtracting the row max.
    pub fn softmax_rows(self) -> Result<Var<'t>> {
        let (shape, data) = self.tape.with_node(self.id, |n| {
            let cols = match n.shape.last() {
                Some(&c) => c,
                None => return shape_err("softmax_rows on a rank-0 tensor"),
            };
            let mut out = n.data.clone();
            for row in out.chunks_mut(cols) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                row.iter_mut().for_each(|v| *v /= sum);
            }
            Ok((n.shape.clone(), out))
        })?;
        self.tape
            .push("softmax_rows", shape, data, Op::SoftmaxRows { a: self.id }, &[self.id])
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(self) -> Result<Var<'t>> {
        let (shape, data) = self.tape.with_node(self.id, |n| {
            (n.shape.clone(), n.data.iter().map(|&x| x * normal_cdf(x)).collect())
        });
        self.tape
            .push("gelu", shape, data, Op::Gelu { a: self.id }, &[self.id])
    }

    /// Arithmetic mean along `axis`, which is removed from the shape.
    pub fn mean_axis(self, axis: usize) -> Result<Var<'t>> {
        let (shape, data) = self.tape.with_node(self.id, |n| {
            if axis >= n.shape.len() {
                return Err(Error::Index(format!(
                    "mean over axis {axis} of rank-{} tensor",
                    n.shape.len()
                )));
            }
            let (outer, len, inner) = split_at_axis(&n.shape, axis);
            let mut data = vec![0.0; outer * inner];
            for o in 0..outer {
                for l in 0..len {
                    let src = &n.data[(o * len + l) * inner..][..inner];
                    for (d, s) in data[o * inner..][..inner].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
            data.iter_mut().for_each(|v| *v /= len as f64);
            let mut shape = n.shape.clone();
            shape.remove(axis);
            Ok((shape, data))
        })?;
        let op = Op::MeanAxis { a: self.id, axis };
        self.tape.push("mean_axis", shape, data, op, &[self.id])
    }

    /// Sum of all entries, as a rank-0 value.
    pub fn sum(self) -> Result<Var<'t>> {
        let total = self.tape.with_node(self.id, |n| n.data.iter().sum());
        self.tape
            .push("sum", Vec::new(), vec![total], Op::Sum { a: self.id }, &[self.id])
    }
}

/// Joins `parts` along `axis`; all other extents must agree.
pub fn concat<'t>(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
    let tape = first.tape;
    for p in parts {
        first.same_tape(p)?;
    }
    let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
    let (shape, data) = tape.with_nodes(|nodes| {
        let base = &nodes[ids[0]].shape;
        if axis >= base.len() {
            return Err(Error::Index(format!("concat axis {axis} on {base:?}")));
        }
        let mut total = 0;
        for &id in &ids {
            let s = &nodes[id].shape;
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return shape_err(format!("concat: {s:?} does not match {base:?}"));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_at_axis(base, axis);
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &id in &ids {
                let len = nodes[id].shape[axis] * inner;
                data.extend_from_slice(&nodes[id].data[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base.clone();
        shape[axis] = total;
        Ok((shape, data))
    })?;
    let op = Op::Concat {
        parts: ids.clone(),
        axis,
    };
    tape.push("concat", shape, data, op, &ids)
}

/// Layer normalisation over the last axis with affine `gamma`, `beta`.
/// Uses the biased (population) variance.
pub fn layer_norm<'t>(x: Var<'t>, gamma: Var<'t>, beta: Var<'t>, eps: f64) -> Result<Var<'t>> {
    x.same_tape(&gamma)?;
    x.same_tape(&beta)?;
    let tape = x.tape;
    let (shape, out, normed, inv_std) = tape.with_nodes(|nodes| {
        let (xn, gn, bn) = (&nodes[x.id], &nodes[gamma.id], &nodes[beta.id]);
        let d = match xn.shape.last() {
            Some(&d) => d,
            None => return shape_err("layer_norm on a rank-0 tensor"),
        };
        if gn.shape != [d] || bn.shape != [d] {
            return shape_err(format!(
                "layer_norm: affine shapes {:?}/{:?} for feature size {d}",
                gn.shape, bn.shape
            ));
        }
        let rows = xn.data.len() / d;
        let mut normed = vec![0.0; xn.data.len()];
        let mut out = vec![0.0; xn.data.len()];
        let mut inv_std = Vec::with_capacity(rows);
        for ((xr, nr), or) in xn
            .data
            .chunks(d)
            .zip(normed.chunks_mut(d))
            .zip(out.chunks_mut(d))
        {
            let mean = xr.iter().sum::<f64>() / d as f64;
            let var = xr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
            let rs = 1.0 / (var + eps).sqrt();
            inv_std.push(rs);
            for j in 0..d {
                nr[j] = (xr[j] - mean) * rs;
                or[j] = nr[j] * gn.data[j] + bn.data[j];
            }
        }
        Ok((xn.shape.clone(), out, normed, inv_std))
    })?;
    let op = Op::LayerNorm {
        x: x.id,
        gamma: gamma.id,
        beta: beta.id,
        normed,
        inv_std,
    };
    tape.push("layer_norm", shape, out, op, &[x.id, gamma.id, beta.id])
}

/// Mean cross-entropy of `logits` (`batch × classes`) against hard labels.
pub fn cross_entropy<'t>(logits: Var<'t>, labels: &[usize]) -> Result<Var<'t>> {
    let shape = logits.shape();
    if shape.len() != 2 {
        return shape_err(format!("cross_entropy expects batch×classes, got {shape:?}"));
    }
    let (rows, classes) = (shape[0], shape[1]);
    if labels.len() != rows {
        return shape_err(format!("{} labels for {rows} rows", labels.len()));
    }
    let mut targets = vec![0.0; rows * classes];
    for (r, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::Index(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        targets[r * classes + label] = 1.0;
    }
    soft_cross_entropy(logits, &targets)
}

/// Mean cross-entropy against per-row target distributions (row-major,
/// same shape as `logits`).
pub fn soft_cross_entropy<'t>(logits: Var<'t>, targets: &[f64]) -> Result<Var<'t>> {
    let tape = logits.tape;
    let (loss, probs) = tape.with_node(logits.id, |n| {
        if n.shape.len() != 2 || targets.len() != n.data.len() {
            return shape_err(format!(
                "soft_cross_entropy: {} targets for logits {:?}",
                targets.len(),
                n.shape
            ));
        }
        let classes = n.shape[1];
        let mut probs = vec![0.0; n.data.len()];
        let mut loss = 0.0;
        for ((lr, pr), tr) in n
            .data
            .chunks(classes)
            .zip(probs.chunks_mut(classes))
            .zip(targets.chunks(classes))
        {
            let max = lr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + lr.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for j in 0..classes {
                pr[j] = (lr[j] - lse).exp();
                if tr[j] != 0.0 {
                    loss -= tr[j] * (lr[j] - lse);
                }
            }
        }
        Ok((loss / n.shape[0] as f64, probs))
    })?;
    let op = Op::CrossEntropy {
        logits: logits.id,
        targets: targets.to_vec(),
        probs,
    };
    tape.push("cross_entropy", Vec::new(), vec![loss], op, &[logits.id])
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    (0..rank)
        .map(|i| {
            let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
            let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
            match (da, db) {
                _ if da == db => Some(da),
                (1, _) => Some(db),
                (_, 1) => Some(da),
                _ => None,
            }
        })
        .collect()
}

fn unravel(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for i in (0..shape.len()).rev() {
        idx[i] = flat % shape[i];
        flat /= shape[i];
    }
    idx
}

/// Flat matrix index into an operand whose batch shape broadcasts to `idx`.
fn broadcast_offset(idx: &[usize], shape: &[usize]) -> usize {
    let skip = idx.len() - shape.len();
    shape
        .iter()
        .zip(&idx[skip..])
        .fold(0, |acc, (&e, &i)| acc * e + if e == 1 { 0 } else { i })
}
