mod config;
mod data;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use septr::dsp::{read_wav, render_text, spectrogram, write_spectrogram, SpectroConfig};
use septr::model::{
    fit_growth_exponent, load_checkpoint_expecting, param_scan, reference_gradchecks, Model, ModelConfig, Variant,
};
use septr::synth::synth_spectro_config;
use septr::train::{
    evaluate, mcnemar, prepare, train, Evaluation, RunOutput, CHECKPOINT_FILE, MANIFEST_FILE, METRICS_FILE,
};

use config::{resolve, Layout, Resolved, RunConfig, RESOLVED_FILE};

/// Largest relative error the gradient check accepts.
const GRADCHECK_TOLERANCE: f64 = 1e-5;
/// Significance level of the paired comparison.
const ALPHA: f64 = 0.01;

#[derive(Parser)]
#[command(name = "septr", version, about = "Separable transformer for audio spectrogram classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the normalised mel spectrogram of a WAV file.
    Spectrogram(SpectrogramArgs),
    /// Train a model and write checkpoint, metrics CSV and manifest.
    Train(TrainArgs),
    /// Accuracy of a checkpoint on a data split.
    Eval(EvalArgs),
    /// McNemar test between two checkpoints on the same split.
    Compare(CompareArgs),
    /// Parameter counts of SepTr and ViT across input sizes.
    AnalyzeParams(AnalyzeArgs),
    /// Finite-difference check of every parameter gradient on tiny models.
    Gradcheck,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Vh,
    Hv,
    V,
    H,
    Vit,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Vh => Variant::VH,
            VariantArg::Hv => Variant::HV,
            VariantArg::V => Variant::V,
            VariantArg::H => Variant::H,
            VariantArg::Vit => Variant::ViT,
        }
    }
}

/// Flags shared by every command that builds a dataset or a model.
#[derive(Args, Clone, Default)]
struct RunArgs {
    /// JSON file with run settings (flags take precedence).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset layout.
    #[arg(long, value_enum)]
    layout: Option<Layout>,
    /// Dataset root for the WAV layouts.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Synthetic training clips.
    #[arg(long)]
    train_count: Option<usize>,
    /// Synthetic validation clips.
    #[arg(long)]
    val_count: Option<usize>,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Stop once validation accuracy reaches this value.
    #[arg(long)]
    target_val_acc: Option<f64>,
}

impl RunArgs {
    fn flags(&self) -> RunConfig {
        RunConfig {
            seed: self.seed,
            layout: self.layout,
            data: self.data.clone(),
            train_count: self.train_count,
            val_count: self.val_count,
            variant: self.variant.map(Variant::from),
            depth: self.depth,
            dim: self.dim,
            heads: self.heads,
            patch_size: self.patch_size,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            target_val_acc: self.target_val_acc,
            ..RunConfig::default()
        }
    }

    /// Resolves against `--config`, or else `fallback` (the settings saved
    /// next to a checkpoint) when it exists.
    fn resolve(&self, fallback: Option<&Path>) -> Result<Resolved> {
        let file = match (&self.config, fallback) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Some(path)) if path.exists() => RunConfig::load(path)?,
            _ => RunConfig::default(),
        };
        Ok(resolve(&self.flags(), &file))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Speech,
    Esc50,
    Synthetic,
}

#[derive(Args)]
struct SpectrogramArgs {
    /// Input WAV file.
    wav: PathBuf,
    /// Output directory; the spectrogram is written as `<stem>.sptr`.
    #[arg(long)]
    out: PathBuf,
    /// JSON file whose `spectro` entry overrides the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "speech")]
    preset: Preset,
    /// Also print the values as text, highest frequency first.
    #[arg(long)]
    render: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Output directory for checkpoint, metrics and manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Val,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "val")]
    split: Split,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct CompareArgs {
    /// First checkpoint (its run settings define the data).
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, value_enum, default_value = "val")]
    split: Split,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Square input sides.
    #[arg(long, value_delimiter = ',', default_value = "64,128,256,512")]
    sizes: Vec<usize>,
    /// SepTr depth; the ViT baseline gets twice as many layers.
    #[arg(long, default_value_t = 3)]
    depth: usize,
    #[arg(long, default_value_t = 256)]
    dim: usize,
    #[arg(long, default_value_t = 5)]
    heads: usize,
    #[arg(long, default_value_t = 50)]
    classes: usize,
    #[arg(long, default_value_t = 8)]
    vit_patch: usize,
    #[arg(long, default_value_t = 2)]
    vit_stride: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Spectrogram(a) => cmd_spectrogram(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Compare(a) => cmd_compare(&a),
        Command::AnalyzeParams(a) => cmd_analyze_params(&a),
        Command::Gradcheck => cmd_gradcheck(),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn cmd_spectrogram(args: &SpectrogramArgs) -> Result<ExitCode> {
    let mut spectro = match args.preset {
        Preset::Speech => SpectroConfig::speech(),
        Preset::Esc50 => SpectroConfig::esc50(),
        Preset::Synthetic => synth_spectro_config(),
    };
    if let Some(path) = &args.config {
        if let Some(s) = RunConfig::load(path)?.spectro {
            spectro = s;
        }
    }
    let wave = read_wav(&args.wav).with_context(|| format!("reading {}", args.wav.display()))?;
    let spec = spectrogram(&wave, &spectro)?;
    fs::create_dir_all(&args.out)?;
    let stem = args.wav.file_stem().context("input path has no file name")?;
    let path = args.out.join(stem).with_extension("sptr");
    write_spectrogram(&path, &spec)?;
    let data = &spec.values().data;
    let (lo, hi) = data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    println!(
        "{}: {} mel bins × {} frames, values in [{lo:.4}, {hi:.4}]",
        path.display(),
        spec.freq_bins(),
        spec.time_slots()
    );
    if args.render {
        print!("{}", render_text(&spec));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(args: &TrainArgs) -> Result<ExitCode> {
    let run = args.run.resolve(None)?;
    let dataset = data::load(&run)?;
    let model_cfg = run.model_for(dataset.classes.len());
    let mut model = Model::with_init_std(model_cfg.clone(), run.seed, run.init_std)?;
    fs::create_dir_all(&args.out)?;
    fs::write(
        args.out.join(RESOLVED_FILE),
        serde_json::to_string_pretty(&RunConfig::from(&run))?,
    )?;
    let output = RunOutput {
        dir: args.out.clone(),
        classes: dataset.classes.clone(),
        sources: run.sources.clone(),
    };
    println!(
        "training {:?} ({} parameters) on {} train / {} val clips, {} classes",
        model_cfg.variant,
        model.param_count(),
        dataset.train.len(),
        dataset.val.len(),
        dataset.classes.len()
    );
    let outcome = train(&mut model, &dataset.train, &dataset.val, &run.train, Some(&output))?;
    println!("epoch  lr          train_loss  train_acc  val_acc  seconds");
    for m in &outcome.metrics.epochs {
        println!(
            "{:5}  {:<10.3e}  {:10.4}  {:9.4}  {:7.4}  {:7.1}",
            m.epoch, m.lr, m.train_loss, m.train_acc, m.val_acc, m.seconds
        );
    }
    println!(
        "best val accuracy {:.4} at epoch {}; wrote {}, {}, {} to {}",
        outcome.best_val_acc,
        outcome.best_epoch,
        CHECKPOINT_FILE,
        METRICS_FILE,
        MANIFEST_FILE,
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

/// Loads `checkpoint`, checks it against the run settings and evaluates it.
fn evaluate_checkpoint(checkpoint: &Path, run: &Resolved, dataset: &data::Dataset, split: Split) -> Result<Evaluation> {
    let expected: ModelConfig = run.model_for(dataset.classes.len());
    let model = load_checkpoint_expecting(checkpoint, &expected)
        .with_context(|| format!("loading {}", checkpoint.display()))?;
    let clips = match split {
        Split::Train => &dataset.train,
        Split::Val => &dataset.val,
    };
    let examples = prepare(clips, &run.train.spectro, run.train.clip_seconds)?;
    Ok(evaluate(&model, &examples)?)
}

fn saved_settings(checkpoint: &Path) -> Option<PathBuf> {
    checkpoint.parent().map(|d| d.join(RESOLVED_FILE))
}

fn cmd_eval(args: &EvalArgs) -> Result<ExitCode> {
    let run = args.run.resolve(saved_settings(&args.checkpoint).as_deref())?;
    let dataset = data::load(&run)?;
    let result = evaluate_checkpoint(&args.checkpoint, &run, &dataset, args.split)?;
    let hits = result.correct.iter().filter(|&&c| c).count();
    println!(
        "accuracy {:.6} ({hits}/{}) on the {} split",
        result.accuracy,
        result.correct.len(),
        split_name(args.split)
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_compare(args: &CompareArgs) -> Result<ExitCode> {
    let run = args.run.resolve(saved_settings(&args.a).as_deref())?;
    let dataset = data::load(&run)?;
    let a = evaluate_checkpoint(&args.a, &run, &dataset, args.split)?;
    let b_run = args.run.resolve(saved_settings(&args.b).as_deref())?;
    if b_run.train.spectro != run.train.spectro || b_run.train.clip_seconds != run.train.clip_seconds {
        bail!("the two checkpoints were trained with different front ends");
    }
    let b = evaluate_checkpoint(&args.b, &b_run, &dataset, args.split)?;
    let test = mcnemar(&a.correct, &b.correct)?;
    let t = test.table;
    println!("accuracy A {:.4}, B {:.4} on {} samples", a.accuracy, b.accuracy, t.total());
    println!("                 B wrong  B right");
    println!("A wrong   {:>14} {:>8}", t.n00, t.n01);
    println!("A right   {:>14} {:>8}", t.n10, t.n11);
    println!("statistic {:.6}  p-value {:.6e}", test.statistic, test.p_value);
    let verdict = if test.significant(ALPHA) { "significant" } else { "not significant" };
    println!("{verdict} at {ALPHA}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_analyze_params(args: &AnalyzeArgs) -> Result<ExitCode> {
    let septr = ModelConfig {
        depth: args.depth,
        dim: args.dim,
        heads: args.heads,
        vit_patch: args.vit_patch,
        vit_stride: args.vit_stride,
        ..ModelConfig::septr_reference(0, 0, args.classes)
    };
    let vit = ModelConfig {
        variant: Variant::ViT,
        depth: 2 * args.depth,
        ..septr.clone()
    };
    let rows = param_scan(&septr, &vit, &args.sizes)?;
    println!("{:>6}  {:>12}  {:>12}  {:>7}", "size", "septr", "vit", "ratio");
    for r in &rows {
        println!("{:>6}  {:>12}  {:>12}  {:>7.3}", r.size, r.septr.total, r.vit.total, r.ratio);
    }
    if rows.len() >= 2 {
        let xs: Vec<f64> = rows.iter().map(|r| r.size as f64).collect();
        let dependent = |f: fn(&septr::model::ScanRow) -> usize| -> Vec<f64> { rows.iter().map(|r| f(r) as f64).collect() };
        let septr_exp = fit_growth_exponent(&xs, &dependent(|r| r.septr.positional))?;
        let vit_exp = fit_growth_exponent(&xs, &dependent(|r| r.vit.positional))?;
        println!("growth exponent of the size-dependent parameters: septr {septr_exp:.3}, vit {vit_exp:.3}");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck() -> Result<ExitCode> {
    let mut ok = true;
    for (name, report) in reference_gradchecks()? {
        let pass = report.max_rel_error <= GRADCHECK_TOLERANCE;
        ok &= pass;
        println!(
            "{name}: max relative error {:.3e} over {} entries ({})",
            report.max_rel_error,
            report.checked,
            if pass { "pass" } else { "FAIL" }
        );
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Val => "validation",
    }
}
