//! Separable transformer, its single-axis and reversed-order ablations, a
//! ViT baseline, checkpoints and the closed-form parameter analyzer.

mod analyzer;
mod checkpoint;
mod fidelity;
mod layers;
mod params;
mod septr;
mod vit;

pub use analyzer::{fit_growth_exponent, param_count, param_scan, ParamBreakdown, ScanRow};
pub use checkpoint::{config_digest, load_checkpoint, load_checkpoint_expecting, save_checkpoint, CHECKPOINT_MAGIC};
pub use fidelity::{
    model_gradcheck, random_spectrogram, reference_gradchecks, tiny_septr_config, tiny_vit_config,
    GRADCHECK_INIT_STD,
};
pub use layers::{multi_head_attention, transformer_block, AttentionIds, BlockIds};
pub use params::ParamStore;
pub use septr::{axis_pass, extract_patches, ClassState, TokenTensor};
pub use vit::overlapping_patches;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::MelSpectrogram;
use crate::error::{Error, Result};
use crate::tensor::gradcheck::{check_gradients, GradReport, FD_STEP, REL_FLOOR};
use crate::tensor::{cross_entropy, Tape, Tensor, Var};
use septr::SepTrLayout;
use vit::VitLayout;

/// Architecture family. The four separable variants differ only in the
/// axis order inside each block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Vertical then horizontal pass (the main model).
    #[serde(rename = "vh")]
    VH,
    /// Horizontal then vertical.
    #[serde(rename = "hv")]
    HV,
    /// Two vertical passes per block.
    #[serde(rename = "v")]
    V,
    /// Two horizontal passes per block.
    #[serde(rename = "h")]
    H,
    /// Joint-attention ViT over overlapping patches.
    #[serde(rename = "vit")]
    ViT,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::VH, Variant::HV, Variant::V, Variant::H, Variant::ViT];

    /// Axis order of the two passes in one separable block.
    pub fn axis_order(self) -> Option<[Axis; 2]> {
        match self {
            Variant::VH => Some([Axis::Vertical, Axis::Horizontal]),
            Variant::HV => Some([Axis::Horizontal, Axis::Vertical]),
            Variant::V => Some([Axis::Vertical, Axis::Vertical]),
            Variant::H => Some([Axis::Horizontal, Axis::Horizontal]),
            Variant::ViT => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::VH => "vh",
            Variant::HV => "hv",
            Variant::V => "v",
            Variant::H => "h",
            Variant::ViT => "vit",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown variant `{s}` (vh, hv, v, h, vit)")))
    }
}

/// Which tokens attend to each other in a pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    /// Tokens sharing a time slot (sequence runs over frequency).
    Vertical,
    /// Tokens sharing a frequency bin (sequence runs over time).
    Horizontal,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Separable blocks for SepTr variants, transformer layers for ViT.
    pub depth: usize,
    pub dim: usize,
    pub heads: usize,
    /// Square patch side for the separable variants.
    pub patch_size: usize,
    pub mlp_ratio: usize,
    pub num_classes: usize,
    pub vit_patch: usize,
    pub vit_stride: usize,
    pub freq_bins: usize,
    pub time_slots: usize,
}

impl ModelConfig {
    /// `L = 3`, `d = 256`, 5 heads, 1×1 patches.
    pub fn septr_reference(freq_bins: usize, time_slots: usize, num_classes: usize) -> Self {
        ModelConfig {
            variant: Variant::VH,
            depth: 3,
            dim: 256,
            heads: 5,
            patch_size: 1,
            mlp_ratio: 4,
            num_classes,
            vit_patch: 8,
            vit_stride: 2,
            freq_bins,
            time_slots,
        }
    }

    /// ViT baseline: 6 layers, 8×8 patches with stride 2.
    pub fn vit_reference(freq_bins: usize, time_slots: usize, num_classes: usize) -> Self {
        ModelConfig {
            variant: Variant::ViT,
            depth: 6,
            ..Self::septr_reference(freq_bins, time_slots, num_classes)
        }
    }

    /// Per-head query/key/value width, `ceil(dim / heads)`.
    pub fn head_dim(&self) -> usize {
        self.dim.div_ceil(self.heads)
    }

    pub fn mlp_hidden(&self) -> usize {
        self.mlp_ratio * self.dim
    }

    /// `(k, n)`: frequency and time token counts after patching.
    pub fn token_grid(&self) -> (usize, usize) {
        (self.freq_bins / self.patch_size, self.time_slots / self.patch_size)
    }

    /// `(rows, cols)` of the overlapping ViT patch grid.
    pub fn vit_grid(&self) -> (usize, usize) {
        (
            (self.freq_bins - self.vit_patch) / self.vit_stride + 1,
            (self.time_slots - self.vit_patch) / self.vit_stride + 1,
        )
    }

    /// Attention layers in the whole network.
    pub fn attention_layers(&self) -> usize {
        match self.variant {
            Variant::ViT => self.depth,
            _ => 2 * self.depth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.depth == 0 || self.heads == 0 || self.mlp_ratio == 0 || self.num_classes == 0 {
            return fail("depth, heads, mlp_ratio and num_classes must be positive".into());
        }
        if self.dim < self.heads {
            return fail(format!("dim {} is smaller than heads {}", self.dim, self.heads));
        }
        if self.freq_bins == 0 || self.time_slots == 0 {
            return fail("input grid must be non-empty".into());
        }
        match self.variant {
            Variant::ViT => {
                if self.vit_patch == 0 || self.vit_stride == 0 {
                    return fail("ViT patch and stride must be positive".into());
                }
                if self.freq_bins < self.vit_patch || self.time_slots < self.vit_patch {
                    return Err(Error::Shape(format!(
                        "{}×{} input is smaller than a {}×{} patch",
                        self.freq_bins, self.time_slots, self.vit_patch, self.vit_patch
                    )));
                }
            }
            _ => {
                if self.patch_size == 0 {
                    return fail("patch size must be positive".into());
                }
                if self.freq_bins % self.patch_size != 0 || self.time_slots % self.patch_size != 0 {
                    return Err(Error::Shape(format!(
                        "{}×{} grid is not divisible by patch size {}",
                        self.freq_bins, self.time_slots, self.patch_size
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Standard deviation of the truncated-normal weight initialiser.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug)]
enum Layout {
    SepTr(SepTrLayout),
    ViT(VitLayout),
}

/// A configured network together with its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
}

impl Model {
    /// Fresh model with truncated-normal weights (std 0.02), zero biases and
    /// unit norm gains.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::with_init_std(config, seed, INIT_STD)
    }

    /// As [`new`](Self::new) with a custom weight scale.
    pub fn with_init_std(config: ModelConfig, seed: u64, std: f64) -> Result<Self> {
        config.validate()?;
        let mut builder = params::Builder::new(ChaCha8Rng::seed_from_u64(seed), std);
        let layout = match config.variant {
            Variant::ViT => Layout::ViT(VitLayout::build(&config, &mut builder)),
            _ => Layout::SepTr(SepTrLayout::build(&config, &mut builder)),
        };
        Ok(Model {
            config,
            params: builder.finish(),
            layout,
        })
    }

    /// Rebuilds a model around existing parameters, checking names and shapes.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if model.params.len() != params.len() {
            return Err(Error::Format(format!(
                "expected {} parameter tensors, found {}",
                model.params.len(),
                params.len()
            )));
        }
        for (i, (name, t)) in params.iter().enumerate() {
            let (want_name, want) = model.params.entry(i);
            if name != want_name || t.shape() != want.shape() {
                return Err(Error::Format(format!(
                    "parameter {i}: found `{name}` {:?}, expected `{want_name}` {:?}",
                    t.shape(),
                    want.shape()
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Records every parameter on `tape` as a gradient-carrying leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.params.bind(tape)
    }

    /// Records the parameters as constants (inference only).
    pub fn bind_frozen<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.params.bind_frozen(tape)
    }

    /// Logits of shape `batch × num_classes`.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        bound: &[Var<'t>],
        batch: &[&MelSpectrogram],
    ) -> Result<Var<'t>> {
        if batch.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        for s in batch {
            if s.freq_bins() != self.config.freq_bins || s.time_slots() != self.config.time_slots {
                return Err(Error::Shape(format!(
                    "spectrogram is {}×{} but the model expects {}×{}",
                    s.freq_bins(),
                    s.time_slots(),
                    self.config.freq_bins,
                    self.config.time_slots
                )));
            }
        }
        match &self.layout {
            Layout::SepTr(l) => l.forward(&self.config, tape, bound, batch),
            Layout::ViT(l) => l.forward(&self.config, tape, bound, batch),
        }
    }

    /// Logits for one spectrogram.
    pub fn logits(&self, spec: &MelSpectrogram) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let bound = self.bind_frozen(&tape);
        Ok(self.forward(&tape, &bound, &[spec])?.value().into_data())
    }

    /// Arg-max class for each spectrogram.
    pub fn predict(&self, batch: &[&MelSpectrogram]) -> Result<Vec<usize>> {
        let tape = Tape::new();
        let bound = self.bind_frozen(&tape);
        let logits = self.forward(&tape, &bound, batch)?.value();
        let c = self.config.num_classes;
        Ok(logits
            .data()
            .chunks(c)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect())
    }

    /// Compares tape gradients of the mean cross-entropy on `batch` against
    /// central finite differences for every parameter entry.
    pub fn gradient_check(&self, batch: &[&MelSpectrogram], labels: &[usize]) -> Result<GradReport> {
        let inputs: Vec<Tensor> = self.params.iter().map(|(_, t)| t.clone()).collect();
        check_gradients(&inputs, FD_STEP, REL_FLOOR, |tape, vars| {
            cross_entropy(self.forward(tape, vars, batch)?, labels)
        })
    }

    /// Parameter indices of the transformer blocks, in execution order.
    pub fn block_ids(&self) -> Vec<&BlockIds> {
        match &self.layout {
            Layout::SepTr(l) => l.passes.iter().map(|p| &p.block).collect(),
            Layout::ViT(l) => l.blocks.iter().collect(),
        }
    }

    /// Index of each pass's positional table (separable variants only).
    pub fn positional_ids(&self) -> Vec<usize> {
        match &self.layout {
            Layout::SepTr(l) => l.passes.iter().map(|p| p.pos).collect(),
            Layout::ViT(l) => vec![l.pos],
        }
    }
}
