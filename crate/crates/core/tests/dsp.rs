use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use septr::dsp::{
    augment_spectrogram, augment_waveform, hamming_window, log_normalize, mel_filterbank,
    mel_project, mixup, spec_augment, spectrogram, stft, AugmentConfig, Mask, MaskAxis, Matrix,
    MelSpectrogram, SpectroConfig, Stft, Waveform,
};
use septr::Error;

/// Direct evaluation of `Σₙ x[n]·w[n−mR]·exp(−j2πkn/N)` over the window support.
fn naive_stft(x: &[f64], cfg: &SpectroConfig) -> Vec<(f64, f64)> {
    let n_fft = cfg.fft_length;
    let w = hamming_window(cfg.window_length);
    let frames = (x.len() - cfg.window_length) / cfg.hop + 1;
    let bins = n_fft / 2 + 1;
    let mut out = vec![(0.0, 0.0); bins * frames];
    for m in 0..frames {
        for k in 0..bins {
            let (mut re, mut im) = (0.0, 0.0);
            for n in m * cfg.hop..m * cfg.hop + cfg.window_length {
                let v = x[n] * w[n - m * cfg.hop];
                let angle = -2.0 * PI * ((k * n) % n_fft) as f64 / n_fft as f64;
                re += v * angle.cos();
                im += v * angle.sin();
            }
            out[k * frames + m] = (re, im);
        }
    }
    out
}

fn max_abs_diff(s: &Stft, oracle: &[(f64, f64)]) -> f64 {
    s.data
        .iter()
        .zip(oracle)
        .map(|(c, &(re, im))| (c.re - re).hypot(c.im - im))
        .fold(0.0, f64::max)
}

fn small_cfg(n: usize, win: usize, hop: usize) -> SpectroConfig {
    SpectroConfig {
        fft_length: n,
        hop,
        window_length: win,
        mel_bins: 8,
        ..SpectroConfig::speech()
    }
}

#[test]
fn stft_zero_signal() {
    let x = Waveform::new(vec![0.0; 700], 16_000).unwrap();
    let s = stft(&x, &SpectroConfig::speech()).unwrap();
    assert!(s.data.iter().all(|c| c.re == 0.0 && c.im == 0.0));
}

#[test]
fn stft_impulse_magnitude_is_window_value() {
    let cfg = small_cfg(64, 32, 8);
    let mut samples = vec![0.0; 96];
    // Frame 2 covers samples 16..48; its centre is sample 32.
    samples[32] = 1.0;
    let x = Waveform::new(samples.clone(), 8000).unwrap();
    let s = stft(&x, &cfg).unwrap();
    let w = hamming_window(32);
    for k in 0..s.bins {
        assert!((s.get(k, 2).norm() - w[16]).abs() < 1e-12);
    }
    assert!(max_abs_diff(&s, &naive_stft(&samples, &cfg)) <= 1e-9);
}

#[test]
fn stft_bin_frequency_sinusoid_peaks_at_that_bin() {
    let cfg = small_cfg(256, 256, 64);
    let fs = 8000.0;
    let k0 = 19;
    let f = k0 as f64 * fs / 256.0;
    let samples: Vec<f64> = (0..1024)
        .map(|n| (2.0 * PI * f * n as f64 / fs).sin() * 0.8)
        .collect();
    let x = Waveform::new(samples.clone(), fs as u32).unwrap();
    let s = stft(&x, &cfg).unwrap();
    for m in 0..s.frames {
        let peak = (0..s.bins)
            .max_by(|&a, &b| s.get(a, m).norm().total_cmp(&s.get(b, m).norm()))
            .unwrap();
        assert_eq!(peak, k0);
    }
    assert!(max_abs_diff(&s, &naive_stft(&samples, &cfg)) <= 1e-9);
}

#[test]
fn stft_matches_naive_dft_on_random_signals() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let configs = [SpectroConfig::speech(), small_cfg(128, 100, 37), small_cfg(64, 64, 64)];
    for trial in 0..8 {
        let cfg = &configs[trial % configs.len()];
        let len = rng.random_range(cfg.window_length..=4096);
        let samples: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x = Waveform::new(samples.clone(), 16_000).unwrap();
        let s = stft(&x, cfg).unwrap();
        assert_eq!(s.frames, (len - cfg.window_length) / cfg.hop + 1);
        let err = max_abs_diff(&s, &naive_stft(&samples, cfg));
        assert!(err <= 1e-9, "trial {trial}: {err}");
    }
}

#[test]
fn mel_of_zero_is_zero() {
    let cfg = SpectroConfig::speech();
    let x = Waveform::new(vec![0.0; 1024], 16_000).unwrap();
    let m = mel_project(&stft(&x, &cfg).unwrap(), &cfg, 16_000).unwrap();
    assert_eq!((m.rows, m.cols), (128, 9));
    assert!(m.data.iter().all(|&v| v == 0.0));
}

#[test]
fn single_bin_lights_at_most_two_filters() {
    let cfg = SpectroConfig::speech();
    let bank = mel_filterbank(16_000, cfg.fft_length, cfg.mel_bins);
    let bins = cfg.fft_length / 2 + 1;
    for k in [1, 7, 40, 200, 511] {
        let mut spec = Stft {
            bins,
            frames: 1,
            data: vec![Default::default(); bins],
        };
        spec.data[k].re = 4.0;
        let m = mel_project(&spec, &cfg, 16_000).unwrap();
        let lit: Vec<usize> = (0..m.rows).filter(|&r| m.data[r] > 0.0).collect();
        assert!(!lit.is_empty() && lit.len() <= 2, "bin {k} lit {lit:?}");
        // Construction oracle: output = weight · sqrt(|X|).
        for &r in &lit {
            let want = bank.weights.get(r, k) * 2.0;
            assert!((m.data[r] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn filterbank_covers_every_bin_between_outer_centres() {
    for (sr, n, mels) in [(16_000u32, 1024usize, 128usize), (16_000, 1024, 32), (44_100, 1024, 128)] {
        let bank = mel_filterbank(sr, n, mels);
        let bins = n / 2 + 1;
        let hz = |k: usize| k as f64 * sr as f64 / n as f64;
        for k in 0..bins {
            let f = hz(k);
            if f < bank.centers[0] || f > bank.centers[mels - 1] {
                continue;
            }
            let total: f64 = (0..mels).map(|r| bank.weights.get(r, k)).sum();
            assert!(total > 0.0, "sr {sr}: bin {k} ({f} Hz) uncovered");
        }
    }
}

#[test]
fn log_normalize_range_and_scale_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let data: Vec<f64> = (0..64).map(|_| rng.random_range(0.01..1.0)).collect();
    let m = Matrix::from_vec(8, 8, data.clone()).unwrap();
    let scaled = Matrix::from_vec(8, 8, data.iter().map(|v| v * 7.3).collect()).unwrap();
    let a = log_normalize(&m, -80.0);
    let b = log_normalize(&scaled, -80.0);
    let min = a.values().data.iter().copied().fold(f64::INFINITY, f64::min);
    let max = a.values().data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!((min, max), (0.0, 1.0));
    for (x, y) in a.values().data.iter().zip(&b.values().data) {
        assert!((x - y).abs() < 1e-9);
    }
}

proptest! {
    #[test]
    fn log_normalize_output_in_unit_interval(data in prop::collection::vec(0.0f64..1e3, 1..40)) {
        let n = data.len();
        let s = log_normalize(&Matrix::from_vec(1, n, data).unwrap(), -80.0);
        prop_assert!(s.values().data.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn silence_gives_all_zero_spectrogram_with_expected_shape() {
    let x = Waveform::new(vec![0.0; 16_000], 16_000).unwrap();
    let s = spectrogram(&x, &SpectroConfig::speech()).unwrap();
    assert_eq!((s.freq_bins(), s.time_slots()), (128, 243));
    assert!(s.values().data.iter().all(|&v| v == 0.0));
}

fn random_spec(rows: usize, cols: usize, seed: u64) -> MelSpectrogram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| rng.random_range(0.1..1.0)).collect();
    MelSpectrogram::new(Matrix::from_vec(rows, cols, data).unwrap(), None).unwrap()
}

#[test]
fn zero_probability_augmentation_is_identity() {
    let cfg = AugmentConfig::disabled();
    let spec = random_spec(6, 9, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(augment_spectrogram(&spec, &cfg, &mut rng).unwrap(), spec);
    let x = Waveform::new((0..800).map(|i| (i as f64 * 0.1).sin() * 0.5).collect(), 8000).unwrap();
    assert_eq!(augment_waveform(&x, &cfg, &mut rng).unwrap(), x);
}

#[test]
fn mixup_endpoint_returns_first_sample() {
    let a = random_spec(4, 5, 2);
    let b = random_spec(4, 5, 3);
    let (mixed, target) = mixup(&a, &[1.0, 0.0], &b, &[0.0, 1.0], 1.0).unwrap();
    assert_eq!(mixed, a);
    assert_eq!(target, vec![1.0, 0.0]);
    let (half, t) = mixup(&a, &[1.0, 0.0], &b, &[0.0, 1.0], 0.25).unwrap();
    assert_eq!(t, vec![0.25, 0.75]);
    let want = 0.25 * a.get(1, 2) + 0.75 * b.get(1, 2);
    assert!((half.get(1, 2) - want).abs() < 1e-15);
}

#[test]
fn time_mask_zeroes_exactly_w_columns() {
    let spec = random_spec(10, 20, 4);
    for w in [1, 3, 7] {
        let masked = spec_augment(
            &spec,
            &[Mask {
                axis: MaskAxis::Time,
                start: 5,
                width: w,
            }],
        )
        .unwrap();
        let zero_cols = (0..20)
            .filter(|&c| (0..10).map(|r| masked.get(r, c)).sum::<f64>() == 0.0)
            .count();
        assert_eq!(zero_cols, w);
    }
    let freq = spec_augment(
        &spec,
        &[Mask {
            axis: MaskAxis::Freq,
            start: 0,
            width: 2,
        }],
    )
    .unwrap();
    let zero_rows = (0..10)
        .filter(|&r| (0..20).map(|c| freq.get(r, c)).sum::<f64>() == 0.0)
        .count();
    assert_eq!(zero_rows, 2);
}

#[test]
fn mask_as_wide_as_axis_is_rejected() {
    let spec = random_spec(4, 6, 5);
    let err = spec_augment(
        &spec,
        &[Mask {
            axis: MaskAxis::Time,
            start: 0,
            width: 6,
        }],
    );
    assert!(matches!(err, Err(Error::Config(_))));
}

#[test]
fn spectrogram_augmentation_is_seed_deterministic() {
    let cfg = AugmentConfig {
        spec_augment_prob: 1.0,
        time_masks: 2,
        freq_masks: 2,
        time_mask_max_fraction: 0.3,
        freq_mask_max_fraction: 0.3,
        ..AugmentConfig::default()
    };
    let spec = random_spec(16, 16, 6);
    let a = augment_spectrogram(&spec, &cfg, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    let b = augment_spectrogram(&spec, &cfg, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    assert_eq!(a, b);
}
