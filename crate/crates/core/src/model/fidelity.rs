use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Model, ModelConfig, Variant};
use crate::dsp::{Matrix, MelSpectrogram};
use crate::error::Result;
use crate::tensor::gradcheck::GradReport;

/// Weight scale for the reference gradient checks. At the default 0.02 most
/// gradients are far below the `ε·|loss|/h ≈ 1e-11` rounding floor of
/// central differences, so relative errors would measure noise.
pub const GRADCHECK_INIT_STD: f64 = 0.4;

/// Grid 4×4, 1×1 patches, `d = 8`, one block, two heads, three classes.
pub fn tiny_septr_config() -> ModelConfig {
    ModelConfig {
        variant: Variant::VH,
        depth: 1,
        dim: 8,
        heads: 2,
        patch_size: 1,
        mlp_ratio: 4,
        num_classes: 3,
        vit_patch: 4,
        vit_stride: 4,
        freq_bins: 4,
        time_slots: 4,
    }
}

/// 8×8 input, 4×4 patches with stride 4, otherwise as the tiny SepTr.
pub fn tiny_vit_config() -> ModelConfig {
    ModelConfig {
        variant: Variant::ViT,
        freq_bins: 8,
        time_slots: 8,
        ..tiny_septr_config()
    }
}

/// Uniform `[0, 1)` spectrogram from a seeded generator.
pub fn random_spectrogram(rows: usize, cols: usize, seed: u64) -> MelSpectrogram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.random_range(0.0..1.0)).collect();
    MelSpectrogram::new(Matrix::from_vec(rows, cols, data).expect("sized"), None)
        .expect("values in range")
}

/// Full-model gradient check of `cfg` at weight seed `seed`, on two random
/// inputs labelled 0 and 2.
pub fn model_gradcheck(cfg: &ModelConfig, seed: u64) -> Result<GradReport> {
    let model = Model::with_init_std(cfg.clone(), seed, GRADCHECK_INIT_STD)?;
    let a = random_spectrogram(cfg.freq_bins, cfg.time_slots, seed + 10);
    let b = random_spectrogram(cfg.freq_bins, cfg.time_slots, seed + 20);
    model.gradient_check(&[&a, &b], &[0, 2 % cfg.num_classes])
}

/// The two reference checks: tiny SepTr (seed 6) and tiny ViT (seed 2).
pub fn reference_gradchecks() -> Result<Vec<(&'static str, GradReport)>> {
    Ok(vec![
        ("septr", model_gradcheck(&tiny_septr_config(), 6)?),
        ("vit", model_gradcheck(&tiny_vit_config(), 2)?),
    ])
}
