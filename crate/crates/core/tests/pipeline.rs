use std::path::Path;

use mflab::config::ExperimentConfig;
use mflab::data::{load_manifest, synth_generate, ImageOptions, SynthMode, SynthOptions};
use mflab::experiment::{self, run_eval, run_report, run_train};
use mflab::metrics::TableFormat;
use mflab::training::{prepare, train_adversarial, TrainSpec};
use mflab::{Architecture, Discriminator, Model, Vocab};

const SMALL: SynthOptions = SynthOptions {
    height: 16,
    width: 16,
    channels: 3,
};

fn small_config(manifest: &Path, out: &Path, arch: Architecture) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seed: 3,
        manifest: manifest.to_path_buf(),
        center_crop_frac: 1.0,
        out_dir: out.to_path_buf(),
        num_merges: 40,
        ..Default::default()
    };
    for (k, v) in [
        ("arch", arch.as_str()),
        ("text.d_model", "16"),
        ("text.n_layers", "1"),
        ("text.n_heads", "2"),
        ("text.ffn_hidden", "16"),
        ("text.max_len", "16"),
        ("image.height", "16"),
        ("image.width", "16"),
        ("image.patch_size", "4"),
        ("image.d_model", "16"),
        ("image.n_layers", "1"),
        ("image.n_heads", "2"),
        ("image.ffn_hidden", "16"),
        ("fusion.ffn_hidden", "8"),
        ("train.epochs", "3"),
        ("train.batch_size", "16"),
        ("train.lr", "0.003"),
        ("train.warmup_steps", "5"),
    ] {
        cfg.set(k, v).unwrap();
    }
    cfg
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn train_eval_report_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth_generate(SynthMode::Both, 120, 1, &tmp.path().join("data"), SMALL).unwrap();
    let run_dir = tmp.path().join("run");
    let summary = run_train(&small_config(&manifest, &run_dir, Architecture::Concat), 1, |_| {}).unwrap();
    for f in ["config.resolved", "history.csv", "model.mfl", "vocab.mfl", "confusion.csv", "heatmap.pgm", "metrics.csv"] {
        assert!(run_dir.join(f).is_file(), "missing {f}");
    }
    assert_eq!(summary.history.split("train").count(), 3);

    let ckpt = run_dir.join(experiment::MODEL_FILE);
    let before = read(&ckpt);
    let eval_dir = tmp.path().join("eval");
    let report = run_eval(&ckpt, &manifest, &eval_dir).unwrap();
    assert_eq!(read(&ckpt), before);
    assert_eq!(Some(&report), summary.test.as_ref());
    assert!(eval_dir.join("config.resolved").is_file());
    assert_eq!(read(&eval_dir.join("confusion.csv")), read(&run_dir.join("confusion.csv")));

    let table = run_report(&[run_dir.clone(), eval_dir], TableFormat::Markdown).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[2].starts_with("| run |"));
    assert_eq!(lines[2].split('|').skip(2).collect::<Vec<_>>(), lines[3].split('|').skip(2).collect::<Vec<_>>());
}

#[test]
fn resolved_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth_generate(SynthMode::TextSignal, 80, 2, &tmp.path().join("data"), SMALL).unwrap();
    let first = tmp.path().join("first");
    run_train(&small_config(&manifest, &first, Architecture::TextOnly), 1, |_| {}).unwrap();

    let mut again = ExperimentConfig::load(&first.join("config.resolved")).unwrap();
    let second = tmp.path().join("second");
    again.out_dir = second.clone();
    run_train(&again, 3, |_| {}).unwrap();
    for f in ["history.csv", "model.mfl", "vocab.mfl", "confusion.csv"] {
        assert_eq!(read(&first.join(f)), read(&second.join(f)), "{f} differs");
    }
}

#[test]
fn synthetic_trees_are_bitwise_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = synth_generate(SynthMode::ImageSignal, 30, 7, &tmp.path().join("a"), SMALL).unwrap();
    let b = synth_generate(SynthMode::ImageSignal, 30, 7, &tmp.path().join("b"), SMALL).unwrap();
    assert_eq!(read(&a), read(&b));
    let da = a.parent().unwrap().join("images");
    let db = b.parent().unwrap().join("images");
    let mut names: Vec<_> = std::fs::read_dir(&da).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 30);
    for n in names {
        assert_eq!(read(&da.join(&n)), read(&db.join(&n)));
    }
}

#[test]
fn discriminator_loss_falls_during_adversarial_training() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth_generate(SynthMode::TextSignal, 200, 4, &tmp.path().join("data"), SMALL).unwrap();
    let cfg = small_config(&manifest, tmp.path(), Architecture::Adversarial);
    let data = load_manifest::<f32>(
        &manifest,
        ImageOptions {
            height: 16,
            width: 16,
            center_crop_frac: 1.0,
        },
    )
    .unwrap();
    let captions: Vec<&str> = data.train.iter().map(|s| s.caption.as_str()).collect();
    let vocab = Vocab::train(&captions, 40).unwrap();
    let mut model_cfg = cfg.model.clone();
    model_cfg.text.vocab_size = vocab.len();
    let train = prepare(&data.train, &vocab, 16, true).unwrap();
    let val = prepare(&data.validation, &vocab, 16, true).unwrap();
    let spec = TrainSpec {
        epochs: 10,
        ..cfg.train.clone()
    };
    let out = train_adversarial(
        Model::new(&model_cfg, 3).unwrap(),
        Discriminator::new(&model_cfg, 3).unwrap(),
        &train,
        &val,
        &spec,
        0.5,
    )
    .unwrap();
    let d: Vec<f64> = out.generator.history.split("train_d").map(|r| r.loss).collect();
    assert_eq!(d.len(), 10);
    assert!(d[9] < d[0], "discriminator loss {d:?}");
}

#[test]
fn load_rejects_unknown_keys_and_missing_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = tmp.path().join("manifest.csv");
    std::fs::write(&manifest, "id,split,image,caption,label\n").unwrap();
    let cfg = tmp.path().join("a.cfg");
    std::fs::write(&cfg, "seed = 1\nmanifest.path = x\n").unwrap();
    assert!(ExperimentConfig::load(&cfg).unwrap_err().is_validation());
    std::fs::write(&cfg, "data.manifest = manifest.csv\n").unwrap();
    assert!(ExperimentConfig::load(&cfg).unwrap_err().is_validation());
    std::fs::write(&cfg, "seed = 1\ndata.manifest = missing.csv\n").unwrap();
    assert!(ExperimentConfig::load(&cfg).unwrap_err().is_validation());
    std::fs::write(&cfg, "seed = 1\ndata.manifest = manifest.csv\n").unwrap();
    let loaded = ExperimentConfig::load(&cfg).unwrap();
    assert_eq!(loaded.manifest, manifest);
}
