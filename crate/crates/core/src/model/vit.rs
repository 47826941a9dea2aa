use super::layers::{transformer_block, BlockIds, HeadIds};
use super::params::Builder;
use super::ModelConfig;
use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::tensor::{concat, Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub(crate) struct VitLayout {
    pub(crate) proj: usize,
    pub(crate) proj_bias: usize,
    pub(crate) cls: usize,
    /// Joint table over the class slot plus every patch position.
    pub(crate) pos: usize,
    pub(crate) blocks: Vec<BlockIds>,
    pub(crate) head: HeadIds,
}

impl VitLayout {
    pub(crate) fn build(cfg: &ModelConfig, b: &mut Builder) -> Self {
        let d = cfg.dim;
        let (gr, gc) = cfg.vit_grid();
        let proj = b.weight("embed.proj".into(), &[cfg.vit_patch * cfg.vit_patch, d]);
        let proj_bias = b.zeros("embed.proj_bias".into(), &[d]);
        let cls = b.weight("embed.cls".into(), &[d]);
        let pos = b.weight("embed.pos".into(), &[gr * gc + 1, d]);
        let blocks = (0..cfg.depth)
            .map(|l| BlockIds::build(b, &format!("blocks.{l}"), d, cfg.heads, cfg.mlp_hidden()))
            .collect();
        let head = HeadIds::build(b, d, cfg.num_classes);
        VitLayout {
            proj,
            proj_bias,
            cls,
            pos,
            blocks,
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
        let d = cfg.dim;
        let (gr, gc) = cfg.vit_grid();
        let g = gr * gc;
        let pp = cfg.vit_patch * cfg.vit_patch;
        let mut data = Vec::with_capacity(batch.len() * g * pp);
        for spec in batch {
            data.extend(overlapping_patches(spec, cfg.vit_patch, cfg.vit_stride)?);
        }
        let b = batch.len();
        let patches = tape.constant(Tensor::new([b, g, pp], data)?);
        let tokens = patches.matmul(p[self.proj])?.add(p[self.proj_bias])?;
        let cls = p[self.cls].repeat_axis(0, b)?.reshape(&[b, 1, d])?;
        let mut x = concat(&[cls, tokens], 1)?.add(p[self.pos])?;
        for block in &self.blocks {
            x = transformer_block(x, p, block)?;
        }
        let cls = x.slice(1, 0, 1)?.reshape(&[b, d])?;
        self.head.forward(p, cls)
    }
}

/// `size×size` patches taken every `stride` bins/slots, row-major over the
/// patch grid (frequency first), each flattened frequency-major.
pub fn overlapping_patches(spec: &MelSpectrogram, size: usize, stride: usize) -> Result<Vec<f64>> {
    let (f, t) = (spec.freq_bins(), spec.time_slots());
    if size == 0 || stride == 0 {
        return Err(Error::Config("patch size and stride must be positive".into()));
    }
    if f < size || t < size {
        return Err(Error::Shape(format!("{f}×{t} input is smaller than a {size}×{size} patch")));
    }
    let (gr, gc) = ((f - size) / stride + 1, (t - size) / stride + 1);
    let mut out = Vec::with_capacity(gr * gc * size * size);
    for i in 0..gr {
        for j in 0..gc {
            for r in 0..size {
                for c in 0..size {
                    out.push(spec.get(i * stride + r, j * stride + c));
                }
            }
        }
    }
    Ok(out)
}
