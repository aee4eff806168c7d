//! Experiment configuration as flat `key = value` lines with dotted keys.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown and repeated
//! keys are errors, and `seed` must be given.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::encoders::{ImageEncoderConfig, TextEncoderConfig};
use crate::error::{Error, Result};
use crate::fusion::{Architecture, FusionConfig};
use crate::model::ModelConfig;
use crate::training::TrainSpec;

pub const KEYS: [&str; 33] = [
    "seed",
    "arch",
    "data.manifest",
    "data.center_crop_frac",
    "output.dir",
    "tokenizer.num_merges",
    "text.d_model",
    "text.n_layers",
    "text.n_heads",
    "text.ffn_hidden",
    "text.max_len",
    "text.dropout_rate",
    "image.height",
    "image.width",
    "image.channels",
    "image.patch_size",
    "image.d_model",
    "image.n_layers",
    "image.n_heads",
    "image.ffn_hidden",
    "fusion.n_heads",
    "fusion.ffn_hidden",
    "fusion.adv_lambda",
    "fusion.shared_half_encoders",
    "train.epochs",
    "train.batch_size",
    "train.warmup_steps",
    "train.lr",
    "train.shuffle",
    "train.allow_any_batch_size",
    "train.beta1",
    "train.beta2",
    "train.eps",
];

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub manifest: PathBuf,
    pub center_crop_frac: f64,
    pub out_dir: PathBuf,
    pub num_merges: usize,
    /// `text.vocab_size` is filled in once the tokenizer is trained;
    /// `fusion.d_text` and `fusion.d_image` follow the encoder widths.
    pub model: ModelConfig,
    pub train: TrainSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            manifest: PathBuf::from("manifest.csv"),
            center_crop_frac: 0.7,
            out_dir: PathBuf::from("runs/default"),
            num_merges: 200,
            model: ModelConfig {
                text: TextEncoderConfig::default(),
                image: ImageEncoderConfig::default(),
                fusion: FusionConfig::default(),
            },
            train: TrainSpec::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("invalid value `{value}` for `{key}`")))
}

impl ExperimentConfig {
    pub fn arch(&self) -> Architecture {
        self.model.fusion.arch
    }

    /// Sets one key. Paths are taken as given.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "seed" => {
                self.seed = parse(key, value)?;
                t.seed = self.seed;
            }
            "arch" => m.fusion.arch = value.parse()?,
            "data.manifest" => self.manifest = PathBuf::from(value),
            "data.center_crop_frac" => self.center_crop_frac = parse(key, value)?,
            "output.dir" => self.out_dir = PathBuf::from(value),
            "tokenizer.num_merges" => self.num_merges = parse(key, value)?,
            "text.d_model" => {
                m.text.d_model = parse(key, value)?;
                m.fusion.d_text = m.text.d_model;
            }
            "text.n_layers" => m.text.n_layers = parse(key, value)?,
            "text.n_heads" => m.text.n_heads = parse(key, value)?,
            "text.ffn_hidden" => m.text.ffn_hidden = parse(key, value)?,
            "text.max_len" => m.text.max_len = parse(key, value)?,
            "text.dropout_rate" => m.text.dropout_rate = parse(key, value)?,
            "image.height" => m.image.height = parse(key, value)?,
            "image.width" => m.image.width = parse(key, value)?,
            "image.channels" => m.image.channels = parse(key, value)?,
            "image.patch_size" => m.image.patch_size = parse(key, value)?,
            "image.d_model" => {
                m.image.d_model = parse(key, value)?;
                m.fusion.d_image = m.image.d_model;
            }
            "image.n_layers" => m.image.n_layers = parse(key, value)?,
            "image.n_heads" => m.image.n_heads = parse(key, value)?,
            "image.ffn_hidden" => m.image.ffn_hidden = parse(key, value)?,
            "fusion.n_heads" => m.fusion.n_heads = parse(key, value)?,
            "fusion.ffn_hidden" => m.fusion.ffn_hidden = parse(key, value)?,
            "fusion.adv_lambda" => m.fusion.adv_lambda = parse(key, value)?,
            "fusion.shared_half_encoders" => m.fusion.shared_half_encoders = parse(key, value)?,
            "train.epochs" => t.epochs = parse(key, value)?,
            "train.batch_size" => t.batch_size = parse(key, value)?,
            "train.warmup_steps" => t.warmup_steps = parse(key, value)?,
            "train.lr" => t.lr = parse(key, value)?,
            "train.shuffle" => t.shuffle = parse(key, value)?,
            "train.allow_any_batch_size" => t.allow_any_batch_size = parse(key, value)?,
            "train.beta1" => t.adam.beta1 = parse(key, value)?,
            "train.beta2" => t.adam.beta2 = parse(key, value)?,
            "train.eps" => t.adam.eps = parse(key, value)?,
            other => return Err(Error::config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Parses config text. Relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut seen = HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(format!("line {}: expected `key = value`", n + 1)));
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::config(format!("line {}: `{key}` given twice", n + 1)));
            }
            cfg.set(key, value)
                .map_err(|e| Error::config(format!("line {}: {e}", n + 1)))?;
        }
        if !seen.contains("seed") {
            return Err(Error::config("`seed` is mandatory"));
        }
        cfg.manifest = base.join(&cfg.manifest);
        cfg.out_dir = base.join(&cfg.out_dir);
        Ok(cfg)
    }

    /// Reads, parses, and validates a config file, including that the
    /// manifest exists.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::config(format!("config file {} does not exist", path.display())));
        }
        let cfg = Self::read_unchecked(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parses without validation, e.g. a `config.resolved` whose data has
    /// since moved.
    pub fn read_unchecked(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Everything except the vocabulary size, which comes from the data.
    pub fn validate(&self) -> Result<()> {
        let mut model = self.model.clone();
        model.text.vocab_size = model.text.vocab_size.max(4);
        model.validate()?;
        self.train.validate()?;
        if !(self.center_crop_frac > 0.0 && self.center_crop_frac <= 1.0) {
            return Err(Error::config(format!(
                "data.center_crop_frac must lie in (0, 1], got {}",
                self.center_crop_frac
            )));
        }
        if !self.manifest.is_file() {
            return Err(Error::config(format!(
                "data.manifest {} does not exist",
                self.manifest.display()
            )));
        }
        Ok(())
    }

    fn value(&self, key: &str) -> String {
        let m = &self.model;
        let t = &self.train;
        match key {
            "seed" => self.seed.to_string(),
            "arch" => m.fusion.arch.to_string(),
            "data.manifest" => self.manifest.display().to_string(),
            "data.center_crop_frac" => self.center_crop_frac.to_string(),
            "output.dir" => self.out_dir.display().to_string(),
            "tokenizer.num_merges" => self.num_merges.to_string(),
            "text.d_model" => m.text.d_model.to_string(),
            "text.n_layers" => m.text.n_layers.to_string(),
            "text.n_heads" => m.text.n_heads.to_string(),
            "text.ffn_hidden" => m.text.ffn_hidden.to_string(),
            "text.max_len" => m.text.max_len.to_string(),
            "text.dropout_rate" => m.text.dropout_rate.to_string(),
            "image.height" => m.image.height.to_string(),
            "image.width" => m.image.width.to_string(),
            "image.channels" => m.image.channels.to_string(),
            "image.patch_size" => m.image.patch_size.to_string(),
            "image.d_model" => m.image.d_model.to_string(),
            "image.n_layers" => m.image.n_layers.to_string(),
            "image.n_heads" => m.image.n_heads.to_string(),
            "image.ffn_hidden" => m.image.ffn_hidden.to_string(),
            "fusion.n_heads" => m.fusion.n_heads.to_string(),
            "fusion.ffn_hidden" => m.fusion.ffn_hidden.to_string(),
            "fusion.adv_lambda" => m.fusion.adv_lambda.to_string(),
            "fusion.shared_half_encoders" => m.fusion.shared_half_encoders.to_string(),
            "train.epochs" => t.epochs.to_string(),
            "train.batch_size" => t.batch_size.to_string(),
            "train.warmup_steps" => t.warmup_steps.to_string(),
            "train.lr" => t.lr.to_string(),
            "train.shuffle" => t.shuffle.to_string(),
            "train.allow_any_batch_size" => t.allow_any_batch_size.to_string(),
            "train.beta1" => t.adam.beta1.to_string(),
            "train.beta2" => t.adam.beta2.to_string(),
            "train.eps" => t.adam.eps.to_string(),
            _ => unreachable!("every key in KEYS has a value"),
        }
    }

    /// Every key with its effective value, in [`KEYS`] order.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.value(key));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip() {
        let mut cfg = ExperimentConfig::default();
        for (k, v) in [
            ("seed", "42"),
            ("arch", "crossmodal"),
            ("train.lr", "0.001"),
            ("image.d_model", "32"),
            ("fusion.shared_half_encoders", "true"),
        ] {
            cfg.set(k, v).unwrap();
        }
        cfg.manifest = PathBuf::from("/data/m.csv");
        cfg.out_dir = PathBuf::from("/runs/a");
        let back = ExperimentConfig::parse(&cfg.render(), Path::new("/elsewhere")).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.model.fusion.d_image, 32);
        assert_eq!(back.train.seed, 42);
    }

    #[test]
    fn rejections() {
        let base = Path::new(".");
        let cases = [
            ("arch = concat\n", "seed"),
            ("seed = 1\nseed = 2\n", "twice"),
            ("seed = 1\ntrain.momentum = 0.9\n", "unknown key"),
            ("seed = 1\ntrain.epochs = many\n", "invalid value"),
            ("seed = 1\njust words\n", "key = value"),
        ];
        for (text, needle) in cases {
            let err = ExperimentConfig::parse(text, base).unwrap_err().to_string();
            assert!(err.contains(needle), "{text:?}: {err}");
        }
    }

    #[test]
    fn comments_and_relative_paths() {
        let cfg = ExperimentConfig::parse("# run\n\nseed = 3\ndata.manifest = d/m.csv\n", Path::new("/cfg")).unwrap();
        assert_eq!(cfg.manifest, PathBuf::from("/cfg/d/m.csv"));
        assert_eq!(cfg.seed, 3);
    }

    #[test]
    fn missing_manifest_fails_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.cfg");
        std::fs::write(&path, "seed = 1\ndata.manifest = nope.csv\n").unwrap();
        assert!(matches!(ExperimentConfig::load(&path), Err(Error::Config(_))));
    }
}
