//! Adam, the step-decay schedule, the training loop with augmentation,
//! evaluation and McNemar's paired test.

mod adam;
mod stats;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use stats::{
    chi2_sf_1dof, mcnemar, mcnemar_from_table, ContingencyTable, Evaluation, McNemar,
};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::dsp::{
    augment_spectrogram, augment_waveform, mixup, pad_or_clip, spectrogram, AugmentConfig, Clip,
    MelSpectrogram, SpectroConfig,
};
use crate::error::{Error, Result};
use crate::model::{config_digest, save_checkpoint, Model, ModelConfig};
use crate::tensor::{soft_cross_entropy, Tape};

/// Step decay: `initial_lr · factor^⌊epoch / period⌋`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub initial_lr: f64,
    pub factor: f64,
    pub period: usize,
}

impl Default for Schedule {
    /// `1e-4`, halved every 10 epochs.
    fn default() -> Self {
        Schedule {
            initial_lr: 1e-4,
            factor: 0.5,
            period: 10,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0) || !(self.factor > 0.0 && self.factor <= 1.0) || self.period == 0 {
            return Err(Error::Config(format!(
                "schedule needs lr > 0, 0 < factor ≤ 1 and period ≥ 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

pub fn lr_at_epoch(s: &Schedule, epoch: usize) -> f64 {
    s.initial_lr * s.factor.powi((epoch / s.period) as i32)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: Schedule,
    pub adam: AdamConfig,
    pub seed: u64,
    pub augment: AugmentConfig,
    pub spectro: SpectroConfig,
    /// Pad or clip every clip to this length before the STFT.
    pub clip_seconds: Option<f64>,
    /// Stop once validation accuracy reaches this value.
    pub target_val_acc: Option<f64>,
}

impl Default for TrainConfig {
    /// 50 epochs, batches of 4, Adam with the default schedule, all
    /// augmentations on, speech front end.
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 4,
            schedule: Schedule::default(),
            adam: AdamConfig::default(),
            seed: 0,
            augment: AugmentConfig::default(),
            spectro: SpectroConfig::speech(),
            clip_seconds: None,
            target_val_acc: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch size must be positive".into()));
        }
        if let Some(t) = self.target_val_acc {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("target accuracy {t} outside [0, 1]")));
            }
        }
        self.schedule.validate()?;
        self.adam.validate()?;
        self.augment.validate()?;
        self.spectro.validate()
    }

    fn waveform_augmentation(&self) -> bool {
        let a = &self.augment;
        a.noise_prob > 0.0 || a.shift_prob > 0.0 || a.speed_prob > 0.0
    }
}

/// One CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub epochs: Vec<EpochMetrics>,
}

impl RunMetrics {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        for row in &self.epochs {
            w.serialize(row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path, seed: u64) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let epochs = r
            .deserialize()
            .collect::<std::result::Result<Vec<EpochMetrics>, _>>()
            .map_err(csv_err)?;
        Ok(RunMetrics { seed, epochs })
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("metrics CSV: {e}"))
}

/// Structured record written next to the checkpoint.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub model: ModelConfig,
    pub config_digest: String,
    pub train: TrainConfig,
    pub seed: u64,
    pub param_count: usize,
    pub classes: Vec<String>,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub epochs_run: usize,
    pub optimizer_steps: u64,
    pub checkpoint: String,
    pub metrics: String,
    /// Where each setting came from (flag, config file or default).
    pub sources: BTreeMap<String, String>,
}

/// Where and how to persist a run.
#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub classes: Vec<String>,
    pub sources: BTreeMap<String, String>,
}

pub const CHECKPOINT_FILE: &str = "best.spck";
pub const METRICS_FILE: &str = "metrics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub metrics: RunMetrics,
    /// Parameters from the epoch with the best validation accuracy.
    pub best: Model,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub optimizer_steps: u64,
}

/// A spectrogram and its class.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub spec: MelSpectrogram,
    pub label: usize,
}

/// Front end without augmentation.
pub fn prepare(clips: &[Clip], spectro: &SpectroConfig, clip_seconds: Option<f64>) -> Result<Vec<Example>> {
    clips
        .iter()
        .map(|c| {
            let x = match clip_seconds {
                Some(s) => pad_or_clip(&c.waveform, s)?,
                None => c.waveform.clone(),
            };
            Ok(Example {
                spec: spectrogram(&x, spectro)?,
                label: c.label,
            })
        })
        .collect()
}

fn check_labels(examples: &[Example], classes: usize, split: &str) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::Data(format!("{split} split is empty")));
    }
    if let Some(e) = examples.iter().find(|e| e.label >= classes) {
        return Err(Error::Data(format!(
            "{split} label {} out of range for {classes} classes",
            e.label
        )));
    }
    Ok(())
}

const EVAL_BATCH: usize = 32;

/// Accuracy without augmentation.
pub fn evaluate(model: &Model, examples: &[Example]) -> Result<Evaluation> {
    check_labels(examples, model.config().num_classes, "evaluation")?;
    let mut predictions = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(EVAL_BATCH) {
        let batch: Vec<&MelSpectrogram> = chunk.iter().map(|e| &e.spec).collect();
        predictions.extend(model.predict(&batch)?);
    }
    let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
    Evaluation::from_predictions(predictions, &labels)
}

fn one_hot(label: usize, classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; classes];
    v[label] = 1.0;
    v
}

/// Augmented inputs and soft targets for one mini-batch.
fn build_batch(
    items: &[&Example],
    classes: usize,
    aug: &AugmentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<MelSpectrogram>, Vec<f64>)> {
    let mut specs = Vec::with_capacity(items.len());
    let mut targets = Vec::with_capacity(items.len() * classes);
    for e in items {
        specs.push(augment_spectrogram(&e.spec, aug, rng)?);
    }
    let beta = if aug.mixup_prob > 0.0 && aug.mixup_alpha > 0.0 {
        Some(Beta::new(aug.mixup_alpha, aug.mixup_alpha).map_err(|e| Error::Config(e.to_string()))?)
    } else {
        None
    };
    let originals = specs.clone();
    for (i, e) in items.iter().enumerate() {
        let target = one_hot(e.label, classes);
        match &beta {
            Some(b) if items.len() > 1 && rng.random::<f64>() < aug.mixup_prob => {
                let j = (i + rng.random_range(1..items.len())) % items.len();
                let lambda = b.sample(rng);
                let (mixed, t) = mixup(
                    &originals[i],
                    &target,
                    &originals[j],
                    &one_hot(items[j].label, classes),
                    lambda,
                )?;
                specs[i] = mixed;
                targets.extend(t);
            }
            _ => targets.extend(target),
        }
    }
    Ok((specs, targets))
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Trains `model` in place and returns the metrics and the best-validation
/// parameters. With `out`, the best checkpoint is written whenever
/// validation accuracy improves, and the metrics CSV and manifest at the end.
pub fn train(
    model: &mut Model,
    train_clips: &[Clip],
    val_clips: &[Clip],
    cfg: &TrainConfig,
    out: Option<&RunOutput>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let classes = model.config().num_classes;
    let mut base = prepare(train_clips, &cfg.spectro, cfg.clip_seconds)?;
    let val = prepare(val_clips, &cfg.spectro, cfg.clip_seconds)?;
    check_labels(&base, classes, "train")?;
    check_labels(&val, classes, "validation")?;
    if let Some(o) = out {
        fs::create_dir_all(&o.dir)?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = AdamState::new(model.params(), cfg.adam)?;
    let mut order: Vec<usize> = (0..base.len()).collect();
    let mut metrics = RunMetrics {
        seed: cfg.seed,
        epochs: Vec::with_capacity(cfg.epochs),
    };
    let mut best: Option<(usize, f64, Model)> = None;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = lr_at_epoch(&cfg.schedule, epoch);
        if cfg.waveform_augmentation() {
            for (e, clip) in base.iter_mut().zip(train_clips) {
                let x = match cfg.clip_seconds {
                    Some(s) => pad_or_clip(&clip.waveform, s)?,
                    None => clip.waveform.clone(),
                };
                e.spec = spectrogram(&augment_waveform(&x, &cfg.augment, &mut rng)?, &cfg.spectro)?;
            }
        }
        order.shuffle(&mut rng);

        let (mut loss_sum, mut hits) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let items: Vec<&Example> = chunk.iter().map(|&i| &base[i]).collect();
            let (specs, targets) = build_batch(&items, classes, &cfg.augment, &mut rng)?;
            let refs: Vec<&MelSpectrogram> = specs.iter().collect();
            let tape = Tape::new();
            let bound = model.bind(&tape);
            let logits = model.forward(&tape, &bound, &refs)?;
            let loss = soft_cross_entropy(logits, &targets)?;
            loss_sum += loss.item() * chunk.len() as f64;
            hits += logits
                .value()
                .data()
                .chunks(classes)
                .zip(&items)
                .filter(|(row, e)| argmax(row) == e.label)
                .count();
            let grads = tape.backward(loss)?;
            let params = model.params_mut();
            params.zero_grad();
            params.accumulate(&bound, &grads)?;
            adam_step(params, &mut state, lr)?;
        }

        let val_acc = evaluate(model, &val)?.accuracy;
        metrics.epochs.push(EpochMetrics {
            epoch,
            lr,
            train_loss: loss_sum / base.len() as f64,
            train_acc: hits as f64 / base.len() as f64,
            val_acc,
            seconds: started.elapsed().as_secs_f64(),
        });
        if best.as_ref().is_none_or(|b| val_acc > b.1) {
            if let Some(o) = out {
                save_checkpoint(model, &o.dir.join(CHECKPOINT_FILE))?;
            }
            best = Some((epoch, val_acc, model.clone()));
        }
        if cfg.target_val_acc.is_some_and(|t| val_acc >= t) {
            break;
        }
    }

    let (best_epoch, best_val_acc, best_model) = best.expect("at least one epoch ran");
    let outcome = TrainOutcome {
        metrics,
        best: best_model,
        best_epoch,
        best_val_acc,
        optimizer_steps: state.step(),
    };
    if let Some(o) = out {
        outcome.metrics.write_csv(&o.dir.join(METRICS_FILE))?;
        let manifest = RunManifest {
            model: model.config().clone(),
            config_digest: config_digest(model.config()),
            train: cfg.clone(),
            seed: cfg.seed,
            param_count: model.param_count(),
            classes: o.classes.clone(),
            best_epoch,
            best_val_acc,
            epochs_run: outcome.metrics.epochs.len(),
            optimizer_steps: outcome.optimizer_steps,
            checkpoint: CHECKPOINT_FILE.into(),
            metrics: METRICS_FILE.into(),
            sources: o.sources.clone(),
        };
        fs::write(o.dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    }
    Ok(outcome)
}
