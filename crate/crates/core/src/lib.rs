//! Separable transformer (SepTr) for audio spectrogram classification.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense `f64` tensors and a reverse-mode autodiff tape.
//! - [`dsp`]: waveform I/O, STFT, mel projection, normalisation and
//!   augmentation.
//! - [`model`]: the separable transformer and its ablations, a ViT
//!   baseline, checkpoints and the closed-form parameter analyzer.
//! - [`train`]: Adam, the step-decay schedule, the training loop,
//!   evaluation and McNemar's test.
//! - [`synth`]: a small synthetic four-class audio task for desk-scale runs.

pub mod dsp;
pub mod error;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
