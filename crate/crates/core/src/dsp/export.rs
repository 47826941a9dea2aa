//! `SPTR` spectrogram files: a 16-byte header (`b"SPTR"`, version, rows,
//! cols as little-endian `u32`) followed by `rows·cols` little-endian `f64`
//! values in row-major order.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Matrix, MelSpectrogram};
use crate::error::{Error, Result};

pub const SPECTROGRAM_MAGIC: &[u8; 4] = b"SPTR";
const VERSION: u32 = 1;

pub fn write_spectrogram(path: impl AsRef<Path>, spec: &MelSpectrogram) -> Result<()> {
    let m = spec.values();
    let mut buf = Vec::with_capacity(16 + 8 * m.data.len());
    buf.extend_from_slice(SPECTROGRAM_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(m.rows as u32).to_le_bytes());
    buf.extend_from_slice(&(m.cols as u32).to_le_bytes());
    for v in &m.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_spectrogram(path: impl AsRef<Path>) -> Result<MelSpectrogram> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 || &bytes[..4] != SPECTROGRAM_MAGIC {
        return Err(Error::Format("missing SPTR header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported SPTR version {version}")));
    }
    let (rows, cols) = (word(8) as usize, word(12) as usize);
    let body = &bytes[16..];
    if body.len() != rows * cols * 8 {
        return Err(Error::Format(format!(
            "SPTR body has {} bytes, expected {}",
            body.len(),
            rows * cols * 8
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    MelSpectrogram::new(Matrix::from_vec(rows, cols, data)?, None)
}

/// One line per frequency row (highest first), values to 3 decimals.
pub fn render_text(spec: &MelSpectrogram) -> String {
    let m = spec.values();
    let mut out = String::new();
    for r in (0..m.rows).rev() {
        let line: Vec<String> = (0..m.cols).map(|c| format!("{:.3}", m.get(r, c))).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out
}
