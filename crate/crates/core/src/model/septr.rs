use super::layers::{transformer_block, BlockIds, HeadIds};
use super::params::Builder;
use super::{Axis, Model, ModelConfig};
use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::tensor::{concat, Tape, Tensor, Var};

/// One axis transformer: a block plus its own positional table
/// (`axis_len + 1` rows, class slot first).
#[derive(Clone, Debug)]
pub(crate) struct PassIds {
    pub(crate) axis: Axis,
    pub(crate) block: BlockIds,
    pub(crate) pos: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct SepTrLayout {
    pub(crate) proj: usize,
    pub(crate) proj_bias: usize,
    pub(crate) cls: usize,
    pub(crate) passes: Vec<PassIds>,
    pub(crate) head: HeadIds,
}

impl SepTrLayout {
    pub(crate) fn build(cfg: &ModelConfig, b: &mut Builder) -> Self {
        let d = cfg.dim;
        let (k, n) = cfg.token_grid();
        let order = cfg.variant.axis_order().expect("separable variant");
        let proj = b.weight("embed.proj".into(), &[cfg.patch_size * cfg.patch_size, d]);
        let proj_bias = b.zeros("embed.proj_bias".into(), &[d]);
        let cls = b.weight("embed.cls".into(), &[d]);
        let mut passes = Vec::with_capacity(2 * cfg.depth);
        for layer in 0..cfg.depth {
            for (slot, &axis) in order.iter().enumerate() {
                let (tag, len) = match axis {
                    Axis::Vertical => ("vertical", k),
                    Axis::Horizontal => ("horizontal", n),
                };
                let prefix = format!("blocks.{layer}.{slot}.{tag}");
                let block = BlockIds::build(b, &prefix, d, cfg.heads, cfg.mlp_hidden());
                let pos = b.weight(format!("{prefix}.pos"), &[len + 1, d]);
                passes.push(PassIds { axis, block, pos });
            }
        }
        let head = HeadIds::build(b, d, cfg.num_classes);
        SepTrLayout {
            proj,
            proj_bias,
            cls,
            passes,
            head,
        }
    }

    pub(crate) fn forward<'t>(
        &self,
        cfg: &ModelConfig,
        tape: &'t Tape,
        p: &[Var<'t>],
        batch: &[&MelSpectrogram],
    ) -> Result<Var<'t>> {
        let mut tokens = self.tokenize(cfg, tape, p, batch)?;
        for pass in &self.passes {
            tokens = axis_pass(tokens, p, &pass.block, p[pass.pos], pass.axis)?.pool()?;
        }
        self.head.forward(p, tokens.pooled_class()?)
    }

    fn tokenize<'t>(
        &self,
        cfg: &ModelConfig,
        tape: &'t Tape,
        p: &[Var<'t>],
        batch: &[&MelSpectrogram],
    ) -> Result<TokenTensor<'t>> {
        let (k, n) = cfg.token_grid();
        let pp = cfg.patch_size * cfg.patch_size;
        let mut data = Vec::with_capacity(batch.len() * n * k * pp);
        for spec in batch {
            data.extend(extract_patches(spec, cfg.patch_size)?);
        }
        let patches = tape.constant(Tensor::new([batch.len(), n, k, pp], data)?);
        let values = patches.matmul(p[self.proj])?.add(p[self.proj_bias])?;
        let cls = p[self.cls].repeat_axis(0, batch.len())?;
        Ok(TokenTensor::new(values, cls))
    }
}

/// Non-overlapping `p×p` patches laid out as `[n time][k freq][p·p]`, each
/// patch flattened row-major (frequency-major).
pub fn extract_patches(spec: &MelSpectrogram, p: usize) -> Result<Vec<f64>> {
    let (f, t) = (spec.freq_bins(), spec.time_slots());
    if p == 0 || f % p != 0 || t % p != 0 {
        return Err(Error::Shape(format!("{f}×{t} grid is not divisible by patch size {p}")));
    }
    let (k, n) = (f / p, t / p);
    let mut out = Vec::with_capacity(f * t);
    for j in 0..n {
        for i in 0..k {
            for r in 0..p {
                for c in 0..p {
                    out.push(spec.get(i * p + r, j * p + c));
                }
            }
        }
    }
    Ok(out)
}

/// Class-token state carried between axis passes.
#[derive(Clone, Copy, Debug)]
pub enum ClassState<'t> {
    /// One token per example, `B × d`.
    Pooled(Var<'t>),
    /// One copy per axis sample, `B × len × d`.
    Replicated(Var<'t>),
}

/// Projected token grid `B × n × k × d` (time slots, frequency bins) plus
/// the class token.
#[derive(Clone, Copy, Debug)]
pub struct TokenTensor<'t> {
    values: Var<'t>,
    class: ClassState<'t>,
}

impl<'t> TokenTensor<'t> {
    /// `values` is `B × n × k × d`; `cls` is the pooled `B × d` class token.
    pub fn new(values: Var<'t>, cls: Var<'t>) -> Self {
        TokenTensor {
            values,
            class: ClassState::Pooled(cls),
        }
    }

    pub fn values(&self) -> Var<'t> {
        self.values
    }

    pub fn class_state(&self) -> ClassState<'t> {
        self.class
    }

    pub fn pooled_class(&self) -> Result<Var<'t>> {
        match self.class {
            ClassState::Pooled(c) => Ok(c),
            ClassState::Replicated(_) => Err(Error::Contract(
                "class tokens are still replicated; pool them first".into(),
            )),
        }
    }

    /// Averages the replicated class tokens into one per example.
    pub fn pool(self) -> Result<Self> {
        match self.class {
            ClassState::Replicated(copies) => Ok(TokenTensor {
                values: self.values,
                class: ClassState::Pooled(copies.mean_axis(1)?),
            }),
            ClassState::Pooled(_) => Err(Error::Contract("class token is already pooled".into())),
        }
    }
}

/// One vertical or horizontal transformer pass.
///
/// The grid is split into independent sequences along `axis` (one per time
/// slot for a vertical pass, one per frequency bin for a horizontal pass).
/// The pooled class token is copied to the front of every sequence,
/// positional embeddings are added, and each sequence runs through the
/// block. Afterwards the class state holds one copy per sequence.
pub fn axis_pass<'t>(
    tokens: TokenTensor<'t>,
    p: &[Var<'t>],
    block: &BlockIds,
    pos: Var<'t>,
    axis: Axis,
) -> Result<TokenTensor<'t>> {
    let cls = tokens.pooled_class()?;
    let shape = tokens.values.shape();
    if shape.len() != 4 {
        return Err(Error::Shape(format!("token grid must be B×n×k×d, got {shape:?}")));
    }
    let (b, n, k, d) = (shape[0], shape[1], shape[2], shape[3]);
    let grid = match axis {
        Axis::Vertical => tokens.values,
        Axis::Horizontal => tokens.values.permute(&[0, 2, 1, 3])?,
    };
    let (samples, len) = match axis {
        Axis::Vertical => (n, k),
        Axis::Horizontal => (k, n),
    };
    if pos.shape() != [len + 1, d] {
        return Err(Error::Shape(format!(
            "positional table {:?} does not fit {} tokens of width {d}",
            pos.shape(),
            len + 1
        )));
    }
    let seqs = grid.reshape(&[b * samples, len, d])?;
    let cls_rows = cls.repeat_axis(1, samples)?.reshape(&[b * samples, 1, d])?;
    let x = concat(&[cls_rows, seqs], 1)?.add(pos)?;
    let y = transformer_block(x, p, block)?;
    let copies = y.slice(1, 0, 1)?.reshape(&[b, samples, d])?;
    let out = y.slice(1, 1, len)?.reshape(&[b, samples, len, d])?;
    let values = match axis {
        Axis::Vertical => out,
        Axis::Horizontal => out.permute(&[0, 2, 1, 3])?,
    };
    Ok(TokenTensor {
        values,
        class: ClassState::Replicated(copies),
    })
}

impl Model {
    /// Patch extraction and linear projection for the separable variants.
    pub fn tokenize_project<'t>(
        &self,
        tape: &'t Tape,
        bound: &[Var<'t>],
        batch: &[&MelSpectrogram],
    ) -> Result<TokenTensor<'t>> {
        match &self.layout {
            super::Layout::SepTr(l) => l.tokenize(&self.config, tape, bound, batch),
            super::Layout::ViT(_) => Err(Error::Contract("ViT has no separable token grid".into())),
        }
    }

    /// Runs pass `index` (`0..2L`) of a separable model.
    pub fn run_pass<'t>(
        &self,
        tokens: TokenTensor<'t>,
        bound: &[Var<'t>],
        index: usize,
    ) -> Result<TokenTensor<'t>> {
        match &self.layout {
            super::Layout::SepTr(l) => {
                let pass = l.passes.get(index).ok_or_else(|| {
                    Error::Index(format!("pass {index} of {}", l.passes.len()))
                })?;
                axis_pass(tokens, bound, &pass.block, bound[pass.pos], pass.axis)
            }
            super::Layout::ViT(_) => Err(Error::Contract("ViT has no axis passes".into())),
        }
    }

    /// Axis of every pass in execution order (empty for ViT).
    pub fn pass_axes(&self) -> Vec<Axis> {
        match &self.layout {
            super::Layout::SepTr(l) => l.passes.iter().map(|p| p.axis).collect(),
            super::Layout::ViT(_) => Vec::new(),
        }
    }
}
