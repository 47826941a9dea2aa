use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use septr::dsp::{read_wav, resample_linear, Clip};
use septr::synth::{synth_splits, SynthConfig, CLASS_NAMES};

use crate::config::{Layout, Resolved};

/// Train and validation clips plus the class names (index = label).
pub struct Dataset {
    pub classes: Vec<String>,
    pub train: Vec<Clip>,
    pub val: Vec<Clip>,
}

pub fn load(run: &Resolved) -> Result<Dataset> {
    match run.layout {
        Layout::Synthetic => {
            let cfg = SynthConfig {
                sample_rate: run.sample_rate,
                seconds: run.train.clip_seconds.unwrap_or(1.0),
                ..SynthConfig::default()
            };
            let (train, val) = synth_splits(&cfg, run.train_count, run.val_count, run.seed)?;
            Ok(Dataset {
                classes: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
                train,
                val,
            })
        }
        Layout::SplitDirs => {
            let root = data_root(run)?;
            let classes = class_dirs(&root.join("train"))?;
            let train = read_tree(&root.join("train"), &classes, run.sample_rate)?;
            let val = read_tree(&root.join("val"), &classes, run.sample_rate)?;
            Ok(Dataset { classes, train, val })
        }
        Layout::ClassDirs => {
            let root = data_root(run)?;
            let classes = class_dirs(&root)?;
            let mut all = read_tree(&root, &classes, run.sample_rate)?;
            if !(run.val_fraction > 0.0 && run.val_fraction < 1.0) {
                bail!("val_fraction must lie in (0, 1), got {}", run.val_fraction);
            }
            all.shuffle(&mut ChaCha8Rng::seed_from_u64(run.seed));
            let val_len = ((all.len() as f64 * run.val_fraction).round() as usize).clamp(1, all.len() - 1);
            let train = all.split_off(val_len);
            Ok(Dataset {
                classes,
                train,
                val: all,
            })
        }
    }
}

fn data_root(run: &Resolved) -> Result<PathBuf> {
    let root = run
        .data
        .clone()
        .context("this dataset layout needs --data <DIR>")?;
    if !root.is_dir() {
        bail!("data directory {} does not exist", root.display());
    }
    Ok(root)
}

/// Sorted names of the sub-directories of `dir`.
fn class_dirs(dir: &Path) -> Result<Vec<String>> {
    let mut classes = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            classes.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    classes.sort();
    if classes.len() < 2 {
        bail!("{} needs at least two class directories", dir.display());
    }
    Ok(classes)
}

fn read_tree(dir: &Path, classes: &[String], rate: u32) -> Result<Vec<Clip>> {
    let mut clips = Vec::new();
    for (label, class) in classes.iter().enumerate() {
        let class_dir = dir.join(class);
        let mut files: Vec<PathBuf> = fs::read_dir(&class_dir)
            .with_context(|| format!("listing {}", class_dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        files.sort();
        for path in files {
            let wave = read_wav(&path).with_context(|| format!("reading {}", path.display()))?;
            let waveform = if wave.sample_rate() == rate {
                wave
            } else {
                resample_linear(&wave, rate)?
            };
            clips.push(Clip { waveform, label });
        }
    }
    if clips.is_empty() {
        bail!("no .wav files under {}", dir.display());
    }
    Ok(clips)
}
