use super::params::Builder;
use crate::error::{Error, Result};
use crate::tensor::{layer_norm, Var, LAYER_NORM_EPS};

/// Parameter indices of one multi-head attention layer. Q/K/V projections
/// are bias-free and hold all heads side by side (`d × heads·head_dim`).
#[derive(Clone, Debug)]
pub struct AttentionIds {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub bo: usize,
}

/// Parameter indices of one pre-norm transformer block.
#[derive(Clone, Debug)]
pub struct BlockIds {
    pub norm1_gain: usize,
    pub norm1_bias: usize,
    pub attn: AttentionIds,
    pub norm2_gain: usize,
    pub norm2_bias: usize,
    pub fc1: usize,
    pub fc1_bias: usize,
    pub fc2: usize,
    pub fc2_bias: usize,
    pub heads: usize,
    pub head_dim: usize,
}

impl BlockIds {
    pub(crate) fn build(b: &mut Builder, prefix: &str, dim: usize, heads: usize, mlp_hidden: usize) -> Self {
        let head_dim = dim.div_ceil(heads);
        let inner = heads * head_dim;
        BlockIds {
            norm1_gain: b.ones(format!("{prefix}.norm1.gain"), &[dim]),
            norm1_bias: b.zeros(format!("{prefix}.norm1.bias"), &[dim]),
            attn: AttentionIds {
                wq: b.weight(format!("{prefix}.attn.wq"), &[dim, inner]),
                wk: b.weight(format!("{prefix}.attn.wk"), &[dim, inner]),
                wv: b.weight(format!("{prefix}.attn.wv"), &[dim, inner]),
                wo: b.weight(format!("{prefix}.attn.wo"), &[inner, dim]),
                bo: b.zeros(format!("{prefix}.attn.bo"), &[dim]),
            },
            norm2_gain: b.ones(format!("{prefix}.norm2.gain"), &[dim]),
            norm2_bias: b.zeros(format!("{prefix}.norm2.bias"), &[dim]),
            fc1: b.weight(format!("{prefix}.mlp.fc1"), &[dim, mlp_hidden]),
            fc1_bias: b.zeros(format!("{prefix}.mlp.fc1_bias"), &[mlp_hidden]),
            fc2: b.weight(format!("{prefix}.mlp.fc2"), &[mlp_hidden, dim]),
            fc2_bias: b.zeros(format!("{prefix}.mlp.fc2_bias"), &[dim]),
            heads,
            head_dim,
        }
    }
}

/// Classification head: `d → d` with GELU, then `d → classes`.
#[derive(Clone, Debug)]
pub(crate) struct HeadIds {
    pub(crate) hidden: usize,
    pub(crate) hidden_bias: usize,
    pub(crate) out: usize,
    pub(crate) out_bias: usize,
}

impl HeadIds {
    pub(crate) fn build(b: &mut Builder, dim: usize, classes: usize) -> Self {
        HeadIds {
            hidden: b.weight("head.hidden".into(), &[dim, dim]),
            hidden_bias: b.zeros("head.hidden_bias".into(), &[dim]),
            out: b.weight("head.out".into(), &[dim, classes]),
            out_bias: b.zeros("head.out_bias".into(), &[classes]),
        }
    }

    pub(crate) fn forward<'t>(&self, p: &[Var<'t>], cls: Var<'t>) -> Result<Var<'t>> {
        cls.matmul(p[self.hidden])?
            .add(p[self.hidden_bias])?
            .gelu()?
            .matmul(p[self.out])?
            .add(p[self.out_bias])
    }
}

fn as_batched(x: Var<'_>) -> Result<(Var<'_>, bool)> {
    match x.shape().len() {
        2 => {
            let s = x.shape();
            Ok((x.reshape(&[1, s[0], s[1]])?, true))
        }
        3 => Ok((x, false)),
        r => Err(Error::Shape(format!(
            "attention expects m×d or S×m×d tokens, got rank {r}"
        ))),
    }
}

/// Scaled dot-product attention per head, `softmax(QKᵀ/√d_q)·V`, heads
/// concatenated and mapped back to `d` by the output projection.
///
/// `x` is `m × d` or a batch of independent sequences `S × m × d`.
pub fn multi_head_attention<'t>(x: Var<'t>, p: &[Var<'t>], ids: &BlockIds) -> Result<Var<'t>> {
    let (x, squeeze) = as_batched(x)?;
    let shape = x.shape();
    let (seqs, m) = (shape[0], shape[1]);
    let (h, dh) = (ids.heads, ids.head_dim);
    let split = |w: usize| -> Result<Var<'t>> {
        x.matmul(p[w])?.reshape(&[seqs, m, h, dh])?.permute(&[0, 2, 1, 3])
    };
    let q = split(ids.attn.wq)?;
    let k = split(ids.attn.wk)?;
    let v = split(ids.attn.wv)?;
    let weights = q
        .matmul(k.transpose()?)?
        .scale(1.0 / (dh as f64).sqrt())?
        .softmax_rows()?;
    let z = weights
        .matmul(v)?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[seqs, m, h * dh])?;
    let out = z.matmul(p[ids.attn.wo])?.add(p[ids.attn.bo])?;
    if squeeze {
        out.reshape(&[m, shape[2]])
    } else {
        Ok(out)
    }
}

/// Pre-norm residual block:
/// `P = f(norm(X)) + X`, `R = g(norm(P)) + P`
/// with `f` multi-head attention and `g` a GELU MLP.
pub fn transformer_block<'t>(x: Var<'t>, p: &[Var<'t>], ids: &BlockIds) -> Result<Var<'t>> {
    let normed = layer_norm(x, p[ids.norm1_gain], p[ids.norm1_bias], LAYER_NORM_EPS)?;
    let mid = multi_head_attention(normed, p, ids)?.add(x)?;
    let normed = layer_norm(mid, p[ids.norm2_gain], p[ids.norm2_bias], LAYER_NORM_EPS)?;
    let mlp = normed
        .matmul(p[ids.fc1])?
        .add(p[ids.fc1_bias])?
        .gelu()?
        .matmul(p[ids.fc2])?
        .add(p[ids.fc2_bias])?;
    mlp.add(mid)
}
