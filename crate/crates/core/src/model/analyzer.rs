use serde::Serialize;

use super::{ModelConfig, Variant};
use crate::error::{Error, Result};

/// Closed-form parameter count split by role.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ParamBreakdown {
    /// Patch projection, its bias and the class token.
    pub embedding: usize,
    /// Every positional table; the only input-size-dependent term.
    pub positional: usize,
    /// Attention, MLP and layer-norm parameters of all blocks.
    pub blocks: usize,
    pub head: usize,
    pub total: usize,
}

impl ParamBreakdown {
    /// Parameters that do not depend on the input size.
    pub fn size_independent(&self) -> usize {
        self.total - self.positional
    }
}

fn block_params(cfg: &ModelConfig) -> usize {
    let d = cfg.dim;
    let inner = cfg.heads * cfg.head_dim();
    let hidden = cfg.mlp_hidden();
    let norms = 2 * 2 * d;
    let attention = 3 * d * inner + inner * d + d;
    let mlp = d * hidden + hidden + hidden * d + d;
    norms + attention + mlp
}

/// Exact number of learnable scalars a model with `cfg` instantiates.
pub fn param_count(cfg: &ModelConfig) -> Result<ParamBreakdown> {
    cfg.validate()?;
    let d = cfg.dim;
    let head = d * d + d + d * cfg.num_classes + cfg.num_classes;
    let (embedding, positional, blocks) = match cfg.variant {
        Variant::ViT => {
            let (gr, gc) = cfg.vit_grid();
            let embedding = cfg.vit_patch * cfg.vit_patch * d + 2 * d;
            (embedding, (gr * gc + 1) * d, cfg.depth * block_params(cfg))
        }
        v => {
            let (k, n) = cfg.token_grid();
            let order = v.axis_order().expect("separable variant");
            let per_block: usize = order
                .iter()
                .map(|a| match a {
                    super::Axis::Vertical => (k + 1) * d,
                    super::Axis::Horizontal => (n + 1) * d,
                })
                .sum();
            let embedding = cfg.patch_size * cfg.patch_size * d + 2 * d;
            (
                embedding,
                cfg.depth * per_block,
                2 * cfg.depth * block_params(cfg),
            )
        }
    };
    Ok(ParamBreakdown {
        embedding,
        positional,
        blocks,
        head,
        total: embedding + positional + blocks + head,
    })
}

/// One line of a size scan over square `size × size` inputs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScanRow {
    pub size: usize,
    pub septr: ParamBreakdown,
    pub vit: ParamBreakdown,
    /// `vit.total / septr.total`.
    pub ratio: f64,
}

/// Evaluates both configurations on every square input side in `sizes`.
pub fn param_scan(septr: &ModelConfig, vit: &ModelConfig, sizes: &[usize]) -> Result<Vec<ScanRow>> {
    if vit.variant != Variant::ViT || septr.variant == Variant::ViT {
        return Err(Error::Config(
            "param_scan expects a separable config and a ViT config".into(),
        ));
    }
    sizes
        .iter()
        .map(|&s| {
            let at = |c: &ModelConfig| ModelConfig {
                freq_bins: s,
                time_slots: s,
                ..c.clone()
            };
            let a = param_count(&at(septr))?;
            let b = param_count(&at(vit))?;
            Ok(ScanRow {
                size: s,
                septr: a,
                vit: b,
                ratio: b.total as f64 / a.total as f64,
            })
        })
        .collect()
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_growth_exponent(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::Data("need at least two paired points".into()));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Data("log-log fit needs positive finite values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Data("x values are all equal".into()));
    }
    Ok(sxy / sxx)
}
