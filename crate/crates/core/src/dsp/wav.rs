use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::Waveform;
use crate::error::{Error, Result};

/// Reads an uncompressed WAV file as mono `f64` samples. Integer PCM is
/// scaled to `[-1, 1]`; multi-channel audio is averaged.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| wav_error(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => {
            if spec.bits_per_sample != 32 {
                return Err(Error::Format(format!(
                    "{}: {}-bit float WAV is not supported (use 32-bit float or 16-bit PCM)",
                    path.display(),
                    spec.bits_per_sample
                )));
            }
            reader
                .into_samples::<f32>()
                .map(|s| s.map(f64::from))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| wav_error(path, e))?
        }
        SampleFormat::Int => {
            let scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| wav_error(path, e))?
        }
    };
    let mono = interleaved
        .chunks(channels)
        .map(|frame| (frame.iter().sum::<f64>() / channels as f64).clamp(-1.0, 1.0))
        .collect();
    Waveform::new(mono, spec.sample_rate)
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Io(io),
        hound::Error::Unsupported => Error::Format(format!(
            "{}: compressed or unsupported WAV encoding; convert to 16-bit PCM or 32-bit float",
            path.display()
        )),
        other => Error::Format(format!(
            "{}: {other} (expected an uncompressed PCM or float WAV file)",
            path.display()
        )),
    }
}

/// Writes 16-bit PCM mono.
pub fn write_wav(path: impl AsRef<Path>, x: &Waveform) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: x.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let path = path.as_ref();
    let mut w = WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
    for &s in x.samples() {
        let v = (s.clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16;
        w.write_sample(v).map_err(|e| wav_error(path, e))?;
    }
    w.finalize().map_err(|e| wav_error(path, e))
}

/// Linear-interpolation resampling to `target_rate`.
pub fn resample_linear(x: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::Config("target sample rate must be positive".into()));
    }
    if target_rate == x.sample_rate() || x.is_empty() {
        return Waveform::new(x.samples().to_vec(), target_rate);
    }
    let ratio = x.sample_rate() as f64 / target_rate as f64;
    let out_len = ((x.len() as f64) / ratio).round().max(1.0) as usize;
    let src = x.samples();
    let last = src.len() - 1;
    let samples = (0..out_len)
        .map(|i| {
            let t = i as f64 * ratio;
            let lo = (t.floor() as usize).min(last);
            let hi = (lo + 1).min(last);
            let frac = t - lo as f64;
            src[lo] * (1.0 - frac) + src[hi] * frac
        })
        .collect();
    Waveform::new(samples, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pcm16_round_trip_and_stereo_mixdown() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        let x = Waveform::new(vec![0.0, 0.5, -0.5, 0.25], 8000).unwrap();
        write_wav(&path, &x).unwrap();
        let y = read_wav(&path).unwrap();
        assert_eq!(y.sample_rate(), 8000);
        for (a, b) in x.samples().iter().zip(y.samples()) {
            assert!((a - b).abs() < 1e-4);
        }

        let stereo = dir.path().join("s.wav");
        let spec = WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let mut w = WavWriter::create(&stereo, spec).unwrap();
        for (l, r) in [(0.5f32, -0.5f32), (1.0, 0.0)] {
            w.write_sample(l).unwrap();
            w.write_sample(r).unwrap();
        }
        w.finalize().unwrap();
        let m = read_wav(&stereo).unwrap();
        assert_eq!(m.samples(), &[0.0, 0.5]);
    }

    #[test]
    fn non_wav_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.wav");
        std::fs::write(&path, b"ID3\x03\x00 this is an mp3, honest").unwrap();
        assert!(matches!(read_wav(&path), Err(Error::Format(_))));
    }

    #[test]
    fn resample_linear_halves_length() {
        let x = Waveform::new(vec![0.0, 1.0, 2.0, 3.0], 4).unwrap();
        let y = resample_linear(&x, 2).unwrap();
        assert_eq!(y.samples(), &[0.0, 2.0]);
        let up = resample_linear(&x, 8).unwrap();
        assert_eq!(up.len(), 8);
        assert_eq!(up.samples()[1], 0.5);
    }
}
