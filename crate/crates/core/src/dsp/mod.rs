//! Audio front end: waveform handling, STFT, mel projection, dB
//! normalisation and training-time augmentation.

mod augment;
mod export;
mod mel;
mod stft;
mod wav;

pub use augment::{
    add_noise, augment_spectrogram, augment_waveform, change_speed, mixup, spec_augment,
    time_shift, AugmentConfig, Mask, MaskAxis,
};
pub use export::{read_spectrogram, render_text, write_spectrogram, SPECTROGRAM_MAGIC};
pub use mel::{hz_to_mel, log_normalize, mel_filterbank, mel_project, mel_to_hz, MelFilterbank};
pub use stft::{hamming_window, stft, Stft};
pub use wav::{read_wav, resample_linear, write_wav};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A labelled waveform.
#[derive(Clone, Debug, PartialEq)]
pub struct Clip {
    pub waveform: Waveform,
    pub label: usize,
}

/// Mono audio in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Data("waveform contains non-finite samples".into()));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub(crate) fn with_samples(&self, samples: Vec<f64>) -> Self {
        Waveform {
            samples,
            sample_rate: self.sample_rate,
        }
    }
}

/// Trims or zero-pads `x` to exactly `target_secs · sample_rate` samples,
/// keeping the head.
pub fn pad_or_clip(x: &Waveform, target_secs: f64) -> Result<Waveform> {
    if !(target_secs > 0.0) || !target_secs.is_finite() {
        return Err(Error::Config(format!(
            "target duration must be positive, got {target_secs}"
        )));
    }
    let target = (target_secs * x.sample_rate as f64).round() as usize;
    Ok(x.with_samples(fit_length(&x.samples, target)))
}

pub(crate) fn fit_length(samples: &[f64], target: usize) -> Vec<f64> {
    let mut out: Vec<f64> = samples.iter().take(target).copied().collect();
    out.resize(target, 0.0);
    out
}

/// What the mel filterbank is applied to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MagnitudeMode {
    /// `sqrt(|X|)`, the recipe used for training.
    SqrtMagnitude,
    /// `|X|²`, the classic power spectrogram.
    Power,
}

/// STFT and mel parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectroConfig {
    pub fft_length: usize,
    pub hop: usize,
    pub window_length: usize,
    pub mel_bins: usize,
    /// Dynamic range kept below the peak, in dB (negative).
    pub db_floor: f64,
    pub magnitude: MagnitudeMode,
}

impl SpectroConfig {
    /// Speech Commands / CREMA-D front end: `N=1024`, hop 64, window 512,
    /// 128 mel bins.
    pub fn speech() -> Self {
        SpectroConfig {
            fft_length: 1024,
            hop: 64,
            window_length: 512,
            mel_bins: 128,
            db_floor: -80.0,
            magnitude: MagnitudeMode::SqrtMagnitude,
        }
    }

    /// ESC-50 front end: as [`speech`](Self::speech) with hop 128.
    pub fn esc50() -> Self {
        SpectroConfig {
            hop: 128,
            ..Self::speech()
        }
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn frames_for(&self, len: usize) -> usize {
        if len < self.window_length {
            0
        } else {
            (len - self.window_length) / self.hop + 1
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.window_length > 0
            && self.window_length <= self.fft_length
            && self.hop > 0
            && self.hop <= self.window_length
            && self.mel_bins > 0
            && self.db_floor < 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "need 0 < window ≤ fft_length, 0 < hop ≤ window, mel_bins > 0, db_floor < 0: {self:?}"
            )))
        }
    }
}

impl Default for SpectroConfig {
    fn default() -> Self {
        Self::speech()
    }
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}×{cols} matrix from {} values",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }
}

/// Normalised log-mel spectrogram, `freq_bins × time_slots`, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    values: Matrix,
    config: Option<SpectroConfig>,
}

impl MelSpectrogram {
    /// Wraps a matrix whose entries already lie in `[0, 1]`.
    pub fn new(values: Matrix, config: Option<SpectroConfig>) -> Result<Self> {
        if values.rows == 0 || values.cols == 0 {
            return Err(Error::Shape("empty spectrogram".into()));
        }
        if values.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data("spectrogram values must lie in [0, 1]".into()));
        }
        Ok(MelSpectrogram { values, config })
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn freq_bins(&self) -> usize {
        self.values.rows
    }

    pub fn time_slots(&self) -> usize {
        self.values.cols
    }

    pub fn get(&self, freq: usize, time: usize) -> f64 {
        self.values.get(freq, time)
    }

    pub fn config(&self) -> Option<&SpectroConfig> {
        self.config.as_ref()
    }

    pub(crate) fn map_values(&self, values: Matrix) -> Self {
        MelSpectrogram {
            values,
            config: self.config.clone(),
        }
    }
}

/// Full front end: STFT, mel projection and dB normalisation.
pub fn spectrogram(x: &Waveform, cfg: &SpectroConfig) -> Result<MelSpectrogram> {
    let spec = stft(x, cfg)?;
    let mel = mel_project(&spec, cfg, x.sample_rate())?;
    let mut out = log_normalize(&mel, cfg.db_floor);
    out.config = Some(cfg.clone());
    Ok(out)
}
