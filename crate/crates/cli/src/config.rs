//! Run configuration: a JSON file layer under the command-line flags, with
//! the origin of every resolved setting recorded for the manifest.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use septr::dsp::{AugmentConfig, SpectroConfig};
use septr::model::{ModelConfig, Variant};
use septr::synth::{synth_model_config, synth_train_config, SYNTH_INIT_STD};
use septr::train::{Schedule, TrainConfig};

/// Where training and evaluation data come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    /// The bundled four-class generator; no files needed.
    Synthetic,
    /// `DATA/train/<class>/*.wav` and `DATA/val/<class>/*.wav`.
    SplitDirs,
    /// `DATA/<class>/*.wav`, split into train/validation by a seeded shuffle.
    ClassDirs,
}

/// Everything a run can be configured with. Every field is optional so the
/// same type serves as the file layer; [`resolve`] fills the gaps.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub layout: Option<Layout>,
    pub data: Option<PathBuf>,
    pub train_count: Option<usize>,
    pub val_count: Option<usize>,
    pub val_fraction: Option<f64>,
    pub sample_rate: Option<u32>,
    pub clip_seconds: Option<f64>,
    pub variant: Option<Variant>,
    pub depth: Option<usize>,
    pub dim: Option<usize>,
    pub heads: Option<usize>,
    pub patch_size: Option<usize>,
    pub mlp_ratio: Option<usize>,
    pub vit_patch: Option<usize>,
    pub vit_stride: Option<usize>,
    pub init_std: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub lr_factor: Option<f64>,
    pub lr_period: Option<usize>,
    pub target_val_acc: Option<f64>,
    pub spectro: Option<SpectroConfig>,
    pub augment: Option<AugmentConfig>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Fully resolved settings of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub seed: u64,
    pub layout: Layout,
    pub data: Option<PathBuf>,
    pub train_count: usize,
    pub val_count: usize,
    pub val_fraction: f64,
    pub sample_rate: u32,
    pub init_std: f64,
    /// Architecture without the input grid and class count, which depend on
    /// the data.
    pub model: ModelConfig,
    pub train: TrainConfig,
    #[serde(skip)]
    pub sources: BTreeMap<String, String>,
}

impl Resolved {
    /// Model configuration for `classes` classes on this run's input grid.
    pub fn model_for(&self, classes: usize) -> ModelConfig {
        let samples = self.clip_samples();
        ModelConfig {
            num_classes: classes,
            freq_bins: self.train.spectro.mel_bins,
            time_slots: self.train.spectro.frames_for(samples),
            ..self.model.clone()
        }
    }

    pub fn clip_samples(&self) -> usize {
        let seconds = self.train.clip_seconds.unwrap_or(1.0);
        (seconds * self.sample_rate as f64).round() as usize
    }
}

struct Picker<'a> {
    flags: &'a RunConfig,
    file: &'a RunConfig,
    sources: BTreeMap<String, String>,
}

impl Picker<'_> {
    fn pick<T: Clone + Debug>(&mut self, name: &str, get: impl Fn(&RunConfig) -> Option<T>, default: T) -> T {
        let (value, origin) = match (get(self.flags), get(self.file)) {
            (Some(v), _) => (v, "flag"),
            (None, Some(v)) => (v, "file"),
            (None, None) => (default, "default"),
        };
        self.sources.insert(name.to_string(), origin.to_string());
        value
    }
}

/// Merges `flags` over `file` over the built-in defaults. The synthetic
/// layout defaults to the desk-scale recipe; WAV layouts default to the
/// reference separable model and the speech front end with 4 s clips.
pub fn resolve(flags: &RunConfig, file: &RunConfig) -> Resolved {
    let mut p = Picker {
        flags,
        file,
        sources: BTreeMap::new(),
    };
    let seed = p.pick("seed", |c| c.seed, 0);
    let layout = p.pick("layout", |c| c.layout, Layout::Synthetic);
    let synthetic = layout == Layout::Synthetic;
    let variant = p.pick("variant", |c| c.variant, Variant::VH);

    let (base_model, base_train, base_std) = if synthetic {
        (synth_model_config(variant), synth_train_config(seed), SYNTH_INIT_STD)
    } else {
        let mut train = TrainConfig {
            seed,
            clip_seconds: Some(4.0),
            ..TrainConfig::default()
        };
        train.spectro = SpectroConfig::speech();
        (
            ModelConfig {
                variant,
                ..ModelConfig::septr_reference(0, 0, 0)
            },
            train,
            septr::model::INIT_STD,
        )
    };

    let data = p.pick("data", |c| c.data.clone().map(Some), None);
    let train_count = p.pick("train_count", |c| c.train_count, 800);
    let val_count = p.pick("val_count", |c| c.val_count, 200);
    let val_fraction = p.pick("val_fraction", |c| c.val_fraction, 0.2);
    let sample_rate = p.pick("sample_rate", |c| c.sample_rate, septr::synth::SAMPLE_RATE);
    let init_std = p.pick("init_std", |c| c.init_std, base_std);

    let model = ModelConfig {
        variant,
        depth: p.pick("depth", |c| c.depth, base_model.depth),
        dim: p.pick("dim", |c| c.dim, base_model.dim),
        heads: p.pick("heads", |c| c.heads, base_model.heads),
        patch_size: p.pick("patch_size", |c| c.patch_size, base_model.patch_size),
        mlp_ratio: p.pick("mlp_ratio", |c| c.mlp_ratio, base_model.mlp_ratio),
        vit_patch: p.pick("vit_patch", |c| c.vit_patch, base_model.vit_patch),
        vit_stride: p.pick("vit_stride", |c| c.vit_stride, base_model.vit_stride),
        ..base_model
    };
    let train = TrainConfig {
        epochs: p.pick("epochs", |c| c.epochs, base_train.epochs),
        batch_size: p.pick("batch_size", |c| c.batch_size, base_train.batch_size),
        schedule: Schedule {
            initial_lr: p.pick("lr", |c| c.lr, base_train.schedule.initial_lr),
            factor: p.pick("lr_factor", |c| c.lr_factor, base_train.schedule.factor),
            period: p.pick("lr_period", |c| c.lr_period, base_train.schedule.period),
        },
        seed,
        augment: p.pick("augment", |c| c.augment.clone(), base_train.augment.clone()),
        spectro: p.pick("spectro", |c| c.spectro.clone(), base_train.spectro.clone()),
        clip_seconds: p.pick("clip_seconds", |c| c.clip_seconds.map(Some), base_train.clip_seconds),
        target_val_acc: p.pick("target_val_acc", |c| c.target_val_acc.map(Some), None),
        adam: base_train.adam,
    };
    Resolved {
        seed,
        layout,
        data,
        train_count,
        val_count,
        val_fraction,
        sample_rate,
        init_std,
        model,
        train,
        sources: p.sources,
    }
}

/// File name of the resolved configuration written next to a checkpoint.
pub const RESOLVED_FILE: &str = "run_config.json";

impl From<&Resolved> for RunConfig {
    /// The resolved settings as a file layer, so `eval` and `compare` can
    /// rebuild the data pipeline a checkpoint was trained with.
    fn from(r: &Resolved) -> Self {
        RunConfig {
            seed: Some(r.seed),
            layout: Some(r.layout),
            data: r.data.clone(),
            train_count: Some(r.train_count),
            val_count: Some(r.val_count),
            val_fraction: Some(r.val_fraction),
            sample_rate: Some(r.sample_rate),
            clip_seconds: r.train.clip_seconds,
            variant: Some(r.model.variant),
            depth: Some(r.model.depth),
            dim: Some(r.model.dim),
            heads: Some(r.model.heads),
            patch_size: Some(r.model.patch_size),
            mlp_ratio: Some(r.model.mlp_ratio),
            vit_patch: Some(r.model.vit_patch),
            vit_stride: Some(r.model.vit_stride),
            init_std: Some(r.init_std),
            epochs: Some(r.train.epochs),
            batch_size: Some(r.train.batch_size),
            lr: Some(r.train.schedule.initial_lr),
            lr_factor: Some(r.train.schedule.factor),
            lr_period: Some(r.train.schedule.period),
            target_val_acc: r.train.target_val_acc,
            spectro: Some(r.train.spectro.clone()),
            augment: Some(r.train.augment.clone()),
        }
    }
}
