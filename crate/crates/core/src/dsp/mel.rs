use super::{MagnitudeMode, Matrix, MelSpectrogram, SpectroConfig, Stft};
use crate::error::{Error, Result};
use crate::tensor::gemm;

const LOG_EPS: f64 = 1e-10;

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filters over the non-negative FFT bins.
#[derive(Clone, Debug)]
pub struct MelFilterbank {
    /// `mel_bins × (fft_length/2 + 1)`, each row summing to one.
    pub weights: Matrix,
    /// Filter centre frequencies in Hz.
    pub centers: Vec<f64>,
}

/// Builds `mel_bins` triangular filters with edges equally spaced on the
/// HTK mel scale between 0 Hz and Nyquist. Rows are normalised to unit sum.
/// A filter too narrow to cover any bin centre falls back to a single unit
/// weight at the nearest bin.
pub fn mel_filterbank(sample_rate: u32, fft_length: usize, mel_bins: usize) -> MelFilterbank {
    let bins = fft_length / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..mel_bins + 2)
        .map(|i| mel_to_hz(top * i as f64 / (mel_bins + 1) as f64))
        .collect();
    let bin_hz = |k: usize| k as f64 * sample_rate as f64 / fft_length as f64;

    let mut weights = Matrix::zeros(mel_bins, bins);
    for m in 0..mel_bins {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = &mut weights.data[m * bins..(m + 1) * bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = bin_hz(k);
            *w = if f > lo && f <= center {
                (f - lo) / (center - lo)
            } else if f > center && f < hi {
                (hi - f) / (hi - center)
            } else {
                0.0
            };
        }
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|w| *w /= total);
        } else {
            let nearest = ((center / bin_hz(1)).round() as usize).min(bins - 1);
            row[nearest] = 1.0;
        }
    }
    MelFilterbank {
        weights,
        centers: edges[1..=mel_bins].to_vec(),
    }
}

/// Applies the mel filterbank to `sqrt(|X|)` (or `|X|²` in power mode).
/// Returns a `mel_bins × frames` matrix.
pub fn mel_project(spec: &Stft, cfg: &SpectroConfig, sample_rate: u32) -> Result<Matrix> {
    if spec.bins != cfg.fft_length / 2 + 1 {
        return Err(Error::Shape(format!(
            "STFT has {} bins but config expects {}",
            spec.bins,
            cfg.fft_length / 2 + 1
        )));
    }
    let bank = mel_filterbank(sample_rate, cfg.fft_length, cfg.mel_bins);
    let mags: Vec<f64> = spec
        .data
        .iter()
        .map(|c| match cfg.magnitude {
            MagnitudeMode::SqrtMagnitude => c.norm().sqrt(),
            MagnitudeMode::Power => c.norm_sqr(),
        })
        .collect();
    let mut out = Matrix::zeros(cfg.mel_bins, spec.frames);
    gemm(
        cfg.mel_bins,
        spec.bins,
        spec.frames,
        &bank.weights.data,
        false,
        &mags,
        false,
        &mut out.data,
        false,
    );
    // gemm may leave -0.0 or tiny negative rounding on exact zeros.
    out.data.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(out)
}

/// `20·log10(M + ε)`, clamped to `db_floor` below the peak, then min–max
/// scaled to `[0, 1]`. A constant input maps to all zeros.
pub fn log_normalize(m: &Matrix, db_floor: f64) -> MelSpectrogram {
    let db: Vec<f64> = m.data.iter().map(|v| 20.0 * (v + LOG_EPS).log10()).collect();
    let max = db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let floor = max + db_floor;
    let clamped: Vec<f64> = db.iter().map(|v| v.max(floor)).collect();
    let min = clamped.iter().copied().fold(f64::INFINITY, f64::min);
    let range = max - min;
    let data = if range > 0.0 {
        clamped
            .iter()
            .map(|v| ((v - min) / range).clamp(0.0, 1.0))
            .collect()
    } else {
        vec![0.0; clamped.len()]
    };
    let values = Matrix {
        rows: m.rows,
        cols: m.cols,
        data,
    };
    MelSpectrogram::new(values, None).expect("normalised values lie in [0, 1]")
}
