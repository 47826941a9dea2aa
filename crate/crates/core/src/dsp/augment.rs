use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{fit_length, resample_linear, Matrix, MelSpectrogram, Waveform};
use crate::error::{Error, Result};

/// Training-time augmentation settings. Every transform fires
/// independently with its own probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    /// SNR range in dB for additive Gaussian noise.
    pub noise_snr_db: (f64, f64),
    pub noise_prob: f64,
    /// Largest circular shift as a fraction of the clip length.
    pub shift_max_fraction: f64,
    pub shift_prob: f64,
    /// Candidate playback-rate factors; one is picked uniformly.
    pub speed_factors: Vec<f64>,
    pub speed_prob: f64,
    /// Beta(α, α) parameter for the mixing coefficient.
    pub mixup_alpha: f64,
    pub mixup_prob: f64,
    pub time_masks: usize,
    pub freq_masks: usize,
    /// Widest mask as a fraction of the masked axis.
    pub time_mask_max_fraction: f64,
    pub freq_mask_max_fraction: f64,
    pub spec_augment_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            noise_snr_db: (15.0, 30.0),
            noise_prob: 0.5,
            shift_max_fraction: 0.1,
            shift_prob: 0.5,
            speed_factors: vec![0.9, 1.0, 1.1],
            speed_prob: 0.5,
            mixup_alpha: 0.2,
            mixup_prob: 0.5,
            time_masks: 1,
            freq_masks: 1,
            time_mask_max_fraction: 0.1,
            freq_mask_max_fraction: 0.1,
            spec_augment_prob: 0.5,
        }
    }
}

impl AugmentConfig {
    /// Configuration that leaves every input untouched.
    pub fn disabled() -> Self {
        AugmentConfig {
            noise_prob: 0.0,
            shift_prob: 0.0,
            speed_prob: 0.0,
            mixup_prob: 0.0,
            spec_augment_prob: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            self.noise_prob,
            self.shift_prob,
            self.speed_prob,
            self.mixup_prob,
            self.spec_augment_prob,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("augmentation probabilities must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.time_mask_max_fraction)
            || !(0.0..1.0).contains(&self.freq_mask_max_fraction)
        {
            return Err(Error::Config(
                "mask width fractions must lie in [0, 1) so masks stay narrower than the axis".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.shift_max_fraction) {
            return Err(Error::Config("shift fraction must lie in [0, 1)".into()));
        }
        if self.noise_snr_db.0 > self.noise_snr_db.1 {
            return Err(Error::Config("noise SNR range is reversed".into()));
        }
        if self.speed_factors.is_empty() || self.speed_factors.iter().any(|&f| !(f > 0.0)) {
            return Err(Error::Config("speed factors must be positive and non-empty".into()));
        }
        if !(self.mixup_alpha > 0.0) {
            return Err(Error::Config("mixup alpha must be positive".into()));
        }
        Ok(())
    }
}

/// Adds white Gaussian noise at `snr_db` relative to the signal power.
/// Silent input is returned unchanged. Output is clipped to `[-1, 1]`.
pub fn add_noise<R: Rng + ?Sized>(x: &Waveform, snr_db: f64, rng: &mut R) -> Waveform {
    let n = x.len().max(1) as f64;
    let power = x.samples().iter().map(|s| s * s).sum::<f64>() / n;
    if power == 0.0 {
        return x.clone();
    }
    let std = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    let samples = x
        .samples()
        .iter()
        .map(|&s| {
            let z: f64 = StandardNormal.sample(rng);
            (s + std * z).clamp(-1.0, 1.0)
        })
        .collect();
    x.with_samples(samples)
}

/// Circular shift by `shift` samples (positive delays the signal).
pub fn time_shift(x: &Waveform, shift: isize) -> Waveform {
    let n = x.len();
    if n == 0 {
        return x.clone();
    }
    let k = shift.rem_euclid(n as isize) as usize;
    let mut samples = x.samples().to_vec();
    samples.rotate_right(k);
    x.with_samples(samples)
}

/// Plays the clip `factor` times faster (linear-interpolation resampling),
/// then pads or clips back to the original length.
pub fn change_speed(x: &Waveform, factor: f64) -> Result<Waveform> {
    if !(factor > 0.0) {
        return Err(Error::Config(format!("speed factor must be positive, got {factor}")));
    }
    if factor == 1.0 {
        return Ok(x.clone());
    }
    let target_rate = (x.sample_rate() as f64 / factor).round().max(1.0) as u32;
    let stretched = resample_linear(x, target_rate)?;
    Ok(x.with_samples(fit_length(stretched.samples(), x.len())))
}

/// Applies noise, shift and speed perturbation, each with its own
/// probability.
pub fn augment_waveform<R: Rng + ?Sized>(
    x: &Waveform,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<Waveform> {
    cfg.validate()?;
    let mut out = x.clone();
    if rng.random::<f64>() < cfg.speed_prob {
        let factor = cfg.speed_factors[rng.random_range(0..cfg.speed_factors.len())];
        out = change_speed(&out, factor)?;
    }
    if rng.random::<f64>() < cfg.shift_prob {
        let max = (cfg.shift_max_fraction * out.len() as f64).floor() as i64;
        let shift = rng.random_range(-max..=max) as isize;
        out = time_shift(&out, shift);
    }
    if rng.random::<f64>() < cfg.noise_prob {
        let (lo, hi) = cfg.noise_snr_db;
        let snr = if hi > lo { rng.random_range(lo..=hi) } else { lo };
        out = add_noise(&out, snr, rng);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskAxis {
    Time,
    Freq,
}

/// A stripe of `width` rows (frequency) or columns (time) starting at `start`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Mask {
    pub axis: MaskAxis,
    pub start: usize,
    pub width: usize,
}

/// Zeroes the given stripes.
pub fn spec_augment(spec: &MelSpectrogram, masks: &[Mask]) -> Result<MelSpectrogram> {
    let mut values: Matrix = spec.values().clone();
    for mask in masks {
        let len = match mask.axis {
            MaskAxis::Time => values.cols,
            MaskAxis::Freq => values.rows,
        };
        if mask.width >= len {
            return Err(Error::Config(format!(
                "mask width {} must be below the axis length {len}",
                mask.width
            )));
        }
        if mask.start + mask.width > len {
            return Err(Error::Config(format!(
                "mask {}..{} exceeds axis length {len}",
                mask.start,
                mask.start + mask.width
            )));
        }
        for i in mask.start..mask.start + mask.width {
            match mask.axis {
                MaskAxis::Time => (0..values.rows).for_each(|r| values.set(r, i, 0.0)),
                MaskAxis::Freq => (0..values.cols).for_each(|c| values.set(i, c, 0.0)),
            }
        }
    }
    Ok(spec.map_values(values))
}

/// Draws random SpecAugment stripes (with probability `spec_augment_prob`).
pub fn augment_spectrogram<R: Rng + ?Sized>(
    spec: &MelSpectrogram,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<MelSpectrogram> {
    cfg.validate()?;
    if rng.random::<f64>() >= cfg.spec_augment_prob {
        return Ok(spec.clone());
    }
    let mut masks = Vec::with_capacity(cfg.time_masks + cfg.freq_masks);
    let plan = [
        (MaskAxis::Time, cfg.time_masks, cfg.time_mask_max_fraction, spec.time_slots()),
        (MaskAxis::Freq, cfg.freq_masks, cfg.freq_mask_max_fraction, spec.freq_bins()),
    ];
    for (axis, count, fraction, len) in plan {
        let max_width = (fraction * len as f64).floor() as usize;
        for _ in 0..count {
            let width = rng.random_range(0..=max_width);
            let start = rng.random_range(0..=len - width);
            masks.push(Mask { axis, start, width });
        }
    }
    spec_augment(spec, &masks)
}

/// Convex combination `λ·a + (1−λ)·b` of two spectrograms and their label
/// distributions.
pub fn mixup(
    a: &MelSpectrogram,
    a_target: &[f64],
    b: &MelSpectrogram,
    b_target: &[f64],
    lambda: f64,
) -> Result<(MelSpectrogram, Vec<f64>)> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Config(format!("mixup λ must lie in [0, 1], got {lambda}")));
    }
    if a.values().rows != b.values().rows
        || a.values().cols != b.values().cols
        || a_target.len() != b_target.len()
    {
        return Err(Error::Shape("mixup operands differ in shape".into()));
    }
    if lambda == 1.0 {
        return Ok((a.clone(), a_target.to_vec()));
    }
    let mix = |x: f64, y: f64| (lambda * x + (1.0 - lambda) * y).clamp(0.0, 1.0);
    let data = a
        .values()
        .data
        .iter()
        .zip(&b.values().data)
        .map(|(&x, &y)| mix(x, y))
        .collect();
    let values = Matrix {
        rows: a.values().rows,
        cols: a.values().cols,
        data,
    };
    let target = a_target
        .iter()
        .zip(b_target)
        .map(|(&x, &y)| lambda * x + (1.0 - lambda) * y)
        .collect();
    Ok((a.map_values(values), target))
}
