use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use super::{SpectroConfig, Waveform};
use crate::error::{Error, Result};

/// Complex STFT, stored bin-major: `data[bin * frames + frame]`.
#[derive(Clone, Debug)]
pub struct Stft {
    pub bins: usize,
    pub frames: usize,
    pub data: Vec<Complex64>,
}

impl Stft {
    pub fn get(&self, bin: usize, frame: usize) -> Complex64 {
        self.data[bin * self.frames + frame]
    }
}

/// Periodic Hamming window.
pub fn hamming_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / len as f64).cos())
        .collect()
}

/// Short-time Fourier transform with the phase referenced to absolute
/// sample time:
///
/// `X(m, k) = Σₙ x[n]·w[n − mR]·exp(−j2πkn/N)`
///
/// The window of `window_length` samples starts at `mR` and is implicitly
/// zero-padded to `N`. Only the `N/2 + 1` non-negative bins are kept.
pub fn stft(x: &Waveform, cfg: &SpectroConfig) -> Result<Stft> {
    cfg.validate()?;
    let len = x.len();
    if len < cfg.window_length {
        return Err(Error::InputLength {
            len,
            needed: cfg.window_length,
        });
    }
    let n = cfg.fft_length;
    let frames = cfg.frames_for(len);
    let bins = n / 2 + 1;
    let window = hamming_window(cfg.window_length);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);

    let mut data = vec![Complex64::new(0.0, 0.0); bins * frames];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let samples = x.samples();
    for frame in 0..frames {
        let start = frame * cfg.hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = if i < cfg.window_length {
                Complex64::new(samples[start + i] * window[i], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for (k, &v) in buf.iter().take(bins).enumerate() {
            // Shift from frame-local to absolute time origin.
            let shift = ((k * start) % n) as f64;
            let phase = Complex64::from_polar(1.0, -2.0 * PI * shift / n as f64);
            data[k * frames + frame] = v * phase;
        }
    }
    Ok(Stft { bins, frames, data })
}
