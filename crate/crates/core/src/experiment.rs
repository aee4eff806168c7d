//! End-to-end runs: train, evaluate, report, and the synthetic ablation grid.
//!
//! A run directory holds `config.resolved`, `vocab.mfl`, `model.mfl`
//! (plus `discriminator.mfl` for adversarial runs), `history.csv`, and the
//! test-split `confusion.csv`, `heatmap.pgm` and `metrics.csv`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::checkpoint;
use crate::config::ExperimentConfig;
use crate::data::{load_manifest, synth_generate, ImageOptions, Sample, SynthMode, SynthOptions};
use crate::error::{Error, Result};
use crate::fusion::Architecture;
use crate::metrics::{export_heatmap, render_table, ConfusionMatrix, EvalReport, TableFormat};
use crate::model::{Discriminator, Model};
use crate::tokenizer::Vocab;
use crate::training::{
    evaluate, prepare, train_adversarial_with, train_supervised_with, Example, History, HistoryRecord,
};

pub const CONFIG_FILE: &str = "config.resolved";
pub const VOCAB_FILE: &str = "vocab.mfl";
pub const MODEL_FILE: &str = "model.mfl";
pub const DISCRIMINATOR_FILE: &str = "discriminator.mfl";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.csv";

/// Threads for per-sample gradients, from `MFL_THREADS` (default 1).
pub fn threads_from_env() -> usize {
    std::env::var("MFL_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n >= 1)
        .unwrap_or(1)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn absolute(path: &Path) -> PathBuf {
    std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf())
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub arch: Architecture,
    pub vocab_size: usize,
    pub best_epoch: usize,
    pub history: History,
    /// Metrics of the saved model on the test split, if it has one.
    pub test: Option<EvalReport>,
}

fn needs_image(arch: Architecture) -> bool {
    arch.uses_image() || arch == Architecture::Adversarial
}

fn check_channels(samples: &[Sample<f32>], channels: usize) -> Result<()> {
    match samples.iter().find(|s| s.image.shape()[0] != channels) {
        Some(s) => Err(Error::config(format!(
            "sample `{}` has {} channels but image.channels is {channels}",
            s.id,
            s.image.shape()[0]
        ))),
        None => Ok(()),
    }
}

fn save_test_metrics(dir: &Path, name: &str, report: &EvalReport) -> Result<()> {
    export_heatmap(&report.confusion, dir)?;
    write(
        &dir.join(METRICS_FILE),
        render_table(&[(name.to_string(), report.clone())], TableFormat::Csv)?,
    )
}

/// Trains one model as configured and writes its run directory.
/// `log` receives one line per finished epoch and split.
pub fn run_train(cfg: &ExperimentConfig, threads: usize, mut log: impl FnMut(&str)) -> Result<RunSummary> {
    cfg.validate()?;
    let mut cfg = cfg.clone();
    cfg.manifest = absolute(&cfg.manifest);
    cfg.out_dir = absolute(&cfg.out_dir);
    let dir = cfg.out_dir.clone();
    create_dir(&dir)?;
    write(&dir.join(CONFIG_FILE), cfg.render())?;

    let arch = cfg.arch();
    let image_cfg = &cfg.model.image;
    let data = load_manifest::<f32>(
        &cfg.manifest,
        ImageOptions {
            height: image_cfg.height,
            width: image_cfg.width,
            center_crop_frac: cfg.center_crop_frac,
        },
    )?;
    if needs_image(arch) {
        check_channels(&data.train, image_cfg.channels)?;
    }
    let captions: Vec<&str> = data.train.iter().map(|s| s.caption.as_str()).collect();
    if captions.is_empty() {
        return Err(Error::config("the manifest has no training rows"));
    }
    let vocab = Vocab::train(&captions, cfg.num_merges)?;
    vocab.save(&dir.join(VOCAB_FILE))?;

    let mut model_cfg = cfg.model.clone();
    model_cfg.text.vocab_size = vocab.len();
    let max_len = model_cfg.text.max_len;
    let with_image = needs_image(arch);
    let train = prepare(&data.train, &vocab, max_len, with_image)?;
    let validation = prepare(&data.validation, &vocab, max_len, with_image)?;
    let test = prepare(&data.test, &vocab, max_len, with_image)?;

    let mut spec = cfg.train.clone();
    spec.seed = cfg.seed;
    spec.threads = threads;
    let mut on_epoch = |rows: &[HistoryRecord]| {
        for r in rows {
            log(&format!(
                "epoch {:>3} {:<10} loss {:.4} acc {:.4} wF1 {:.4}",
                r.epoch, r.split, r.loss, r.accuracy, r.weighted_f1
            ));
        }
    };
    let model = Model::<f32>::new(&model_cfg, cfg.seed)?;
    let outcome = if arch == Architecture::Adversarial {
        let disc = Discriminator::<f32>::new(&model_cfg, cfg.seed)?;
        let lambda = model_cfg.fusion.adv_lambda;
        let out = train_adversarial_with(model, disc, &train, &validation, &spec, lambda, &mut on_epoch)?;
        checkpoint::save(&out.discriminator.params, &dir.join(DISCRIMINATOR_FILE))?;
        out.generator
    } else {
        train_supervised_with(model, &train, &validation, &spec, &mut on_epoch)?
    };
    checkpoint::save(&outcome.model.params, &dir.join(MODEL_FILE))?;
    outcome.history.save(&dir.join(HISTORY_FILE))?;

    let test_report = if test.is_empty() {
        None
    } else {
        let eval = evaluate(&outcome.model, &test)?;
        save_test_metrics(&dir, arch.as_str(), &eval.report)?;
        Some(eval.report)
    };
    Ok(RunSummary {
        dir,
        arch,
        vocab_size: vocab.len(),
        best_epoch: outcome.best_epoch,
        history: outcome.history,
        test: test_report,
    })
}

/// Loads the model saved at `checkpoint`, using the `config.resolved` and
/// `vocab.mfl` beside it.
pub fn load_model(checkpoint_path: &Path) -> Result<(ExperimentConfig, Vocab, Model<f32>)> {
    let dir = checkpoint_path.parent().unwrap_or(Path::new("."));
    let cfg = ExperimentConfig::read_unchecked(&dir.join(CONFIG_FILE))?;
    let vocab = Vocab::load(&dir.join(VOCAB_FILE))?;
    let mut model_cfg = cfg.model.clone();
    model_cfg.text.vocab_size = vocab.len();
    let mut model = Model::<f32>::new(&model_cfg, cfg.seed)?;
    checkpoint::restore(&mut model.params, checkpoint_path)?;
    Ok((cfg, vocab, model))
}

/// Evaluates a saved model on the test split of `manifest` (every row when
/// there is no test split) and writes the results to `out`.
pub fn run_eval(checkpoint_path: &Path, manifest: &Path, out: &Path) -> Result<EvalReport> {
    if !checkpoint_path.is_file() {
        return Err(Error::config(format!("checkpoint {} does not exist", checkpoint_path.display())));
    }
    if !manifest.is_file() {
        return Err(Error::config(format!("manifest {} does not exist", manifest.display())));
    }
    let (mut cfg, vocab, model) = load_model(checkpoint_path)?;
    let image = &cfg.model.image;
    let data = load_manifest::<f32>(
        manifest,
        ImageOptions {
            height: image.height,
            width: image.width,
            center_crop_frac: cfg.center_crop_frac,
        },
    )?;
    let with_image = cfg.arch().uses_image();
    let samples: Vec<Sample<f32>> = if data.test.is_empty() {
        data.train.into_iter().chain(data.validation).collect()
    } else {
        data.test
    };
    if with_image {
        check_channels(&samples, image.channels)?;
    }
    let examples: Vec<Example<f32>> = prepare(&samples, &vocab, cfg.model.text.max_len, with_image)?;
    let eval = evaluate(&model, &examples)?;

    create_dir(out)?;
    cfg.manifest = absolute(manifest);
    cfg.out_dir = absolute(out);
    write(&out.join(CONFIG_FILE), cfg.render())?;
    let mut history = History::default();
    history.records.push(HistoryRecord {
        epoch: 0,
        split: "test".into(),
        loss: eval.loss,
        accuracy: eval.report.accuracy,
        weighted_f1: eval.report.weighted_f1,
    });
    history.save(&out.join(HISTORY_FILE))?;
    save_test_metrics(out, cfg.arch().as_str(), &eval.report)?;
    Ok(eval.report)
}

/// One table row per run directory, named after the directory and computed
/// from its `confusion.csv`.
pub fn run_report(runs: &[PathBuf], format: TableFormat) -> Result<String> {
    let mut rows = Vec::with_capacity(runs.len());
    for dir in runs {
        let path = dir.join("confusion.csv");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let cm = ConfusionMatrix::from_csv(&text)?;
        let name = dir
            .file_name()
            .map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
        rows.push((name, EvalReport::from_confusion(&cm)?));
    }
    render_table(&rows, format)
}

pub fn run_synth(mode: SynthMode, n: usize, seed: u64, out: &Path) -> Result<PathBuf> {
    synth_generate(mode, n, seed, out, SynthOptions::default())
}

/// The synthetic ablation grid.
#[derive(Clone, Debug)]
pub struct AblateSpec {
    pub modes: Vec<SynthMode>,
    pub archs: Vec<Architecture>,
    pub seed: u64,
    pub n: usize,
    pub out: PathBuf,
    pub epochs: usize,
    pub threads: usize,
}

pub const ABLATION_EPOCHS: usize = 8;
pub const ABLATION_LR: f64 = 1e-3;
pub const ABLATION_WARMUP: u64 = 25;

impl AblateSpec {
    pub fn new(out: impl Into<PathBuf>, seed: u64) -> Self {
        AblateSpec {
            modes: vec![SynthMode::TextSignal, SynthMode::ImageSignal, SynthMode::Noise],
            archs: vec![Architecture::TextOnly, Architecture::Concat, Architecture::Crossmodal],
            seed,
            n: 1000,
            out: out.into(),
            epochs: ABLATION_EPOCHS,
            threads: 1,
        }
    }

    /// Default toy configuration for one cell of the grid. Synthetic images
    /// carry no caption band, so nothing is cropped.
    pub fn config(&self, mode: SynthMode, arch: Architecture, manifest: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            seed: self.seed,
            manifest: manifest.to_path_buf(),
            center_crop_frac: 1.0,
            out_dir: self.out.join("runs").join(format!("{mode}-{arch}")),
            ..Default::default()
        };
        cfg.model.fusion.arch = arch;
        cfg.train.seed = self.seed;
        cfg.train.lr = ABLATION_LR;
        cfg.train.epochs = self.epochs;
        cfg.train.warmup_steps = ABLATION_WARMUP;
        cfg
    }
}

#[derive(Clone, Debug)]
pub struct AblationResult {
    pub cells: Vec<(SynthMode, Architecture, EvalReport)>,
    /// Full metrics, one row per `mode/arch`.
    pub table: String,
    /// Weighted F1 with modes as rows and architectures as columns.
    pub grid: String,
}

impl AblationResult {
    pub fn get(&self, mode: SynthMode, arch: Architecture) -> Option<&EvalReport> {
        self.cells
            .iter()
            .find(|(m, a, _)| *m == mode && *a == arch)
            .map(|(_, _, r)| r)
    }
}

fn render_grid(spec: &AblateSpec, cells: &[(SynthMode, Architecture, EvalReport)]) -> String {
    let mut out = String::from("| mode |");
    for a in &spec.archs {
        let _ = write!(out, " {a} |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(spec.archs.len()));
    out.push('\n');
    for m in &spec.modes {
        let _ = write!(out, "| {m} |");
        for a in &spec.archs {
            let f1 = cells
                .iter()
                .find(|(cm, ca, _)| cm == m && ca == a)
                .map(|(_, _, r)| format!("{:.4}", r.weighted_f1))
                .unwrap_or_default();
            let _ = write!(out, " {f1} |");
        }
        out.push('\n');
    }
    out
}

/// Generates one dataset per mode, trains every architecture on it, and
/// writes `table.md` and `grid.md` under `spec.out`. Runs are sequential.
pub fn run_ablate(spec: &AblateSpec, mut log: impl FnMut(&str)) -> Result<AblationResult> {
    if spec.modes.is_empty() || spec.archs.is_empty() {
        return Err(Error::Usage("ablate needs at least one mode and one architecture".into()));
    }
    create_dir(&spec.out)?;
    let mut cells = Vec::new();
    for &mode in &spec.modes {
        let data_dir = spec.out.join("data").join(mode.as_str());
        let manifest = run_synth(mode, spec.n, spec.seed, &data_dir)?;
        for &arch in &spec.archs {
            log(&format!("== {mode} / {arch}"));
            let cfg = spec.config(mode, arch, &manifest);
            let run = run_train(&cfg, spec.threads, &mut log)?;
            let report = run
                .test
                .ok_or_else(|| Error::Input("synthetic data has no test split".into()))?;
            log(&format!(
                "== {mode} / {arch}: test acc {:.4} wF1 {:.4} (best epoch {})",
                report.accuracy, report.weighted_f1, run.best_epoch
            ));
            cells.push((mode, arch, report));
        }
    }
    let named: Vec<(String, EvalReport)> = cells
        .iter()
        .map(|(m, a, r)| (format!("{m}/{a}"), r.clone()))
        .collect();
    let table = render_table(&named, TableFormat::Markdown)?;
    let grid = render_grid(spec, &cells);
    write(&spec.out.join("table.md"), &table)?;
    write(&spec.out.join("grid.md"), &grid)?;
    Ok(AblationResult { cells, table, grid })
}
