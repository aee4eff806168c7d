//! Seeded synthetic meme sets with a controlled source of label signal.
//!
//! Captions are random words from a small generated vocabulary and images are
//! uniform noise. Depending on the mode, the label is carried by the caption
//! marker [`MARKER`], by a bright square in the top-left quadrant, by both,
//! or by nothing at all.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::RawImage;
use super::manifest::write_manifest;
use super::{Label, Split};
use crate::error::{Error, Result};

pub const MARKER: &str = "trollmark";

const WORDS: usize = 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SynthMode {
    TextSignal,
    ImageSignal,
    Both,
    Noise,
}

impl SynthMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SynthMode::TextSignal => "text_signal",
            SynthMode::ImageSignal => "image_signal",
            SynthMode::Both => "both",
            SynthMode::Noise => "noise",
        }
    }

    fn text_carries_label(self) -> bool {
        matches!(self, SynthMode::TextSignal | SynthMode::Both)
    }

    fn image_carries_label(self) -> bool {
        matches!(self, SynthMode::ImageSignal | SynthMode::Both)
    }
}

impl FromStr for SynthMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text_signal" => Ok(SynthMode::TextSignal),
            "image_signal" => Ok(SynthMode::ImageSignal),
            "both" => Ok(SynthMode::Both),
            "noise" => Ok(SynthMode::Noise),
            other => Err(Error::config(format!("unknown synthetic mode `{other}`"))),
        }
    }
}

impl fmt::Display for SynthMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthOptions {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            height: 64,
            width: 64,
            channels: 3,
        }
    }
}

/// Sizes of the deterministic 80/10/10 split.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 8 / 10;
    let validation = n / 10;
    (train, validation, n - train - validation)
}

fn vocabulary(rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut words: Vec<String> = Vec::with_capacity(WORDS);
    while words.len() < WORDS {
        let len = rng.random_range(3..=7);
        let w: String = (0..len).map(|_| rng.random_range(b'a'..=b'z') as char).collect();
        if w != MARKER && !words.contains(&w) {
            words.push(w);
        }
    }
    words
}

fn caption(rng: &mut ChaCha8Rng, words: &[String], marked: bool) -> String {
    let len = rng.random_range(4..=10);
    let mut parts: Vec<&str> = (0..len)
        .map(|_| words[rng.random_range(0..words.len())].as_str())
        .collect();
    if marked {
        let at = rng.random_range(0..=parts.len());
        parts.insert(at, MARKER);
    }
    parts.join(" ")
}

fn image(rng: &mut ChaCha8Rng, opts: SynthOptions, square: bool) -> Result<RawImage> {
    let mut pixels = vec![0u8; opts.width * opts.height * opts.channels];
    rng.fill(&mut pixels[..]);
    if square {
        let (side_h, side_w) = (opts.height / 4, opts.width / 4);
        let oy = rng.random_range(0..=opts.height / 2 - side_h);
        let ox = rng.random_range(0..=opts.width / 2 - side_w);
        for y in oy..oy + side_h {
            let row = (y * opts.width + ox) * opts.channels;
            pixels[row..row + side_w * opts.channels].fill(255);
        }
    }
    RawImage::new(opts.width, opts.height, opts.channels, pixels)
}

/// Writes `manifest.csv` and `images/` under `out_dir` and returns the
/// manifest path. Identical arguments produce identical bytes.
pub fn synth_generate(
    mode: SynthMode,
    n: usize,
    seed: u64,
    out_dir: &Path,
    opts: SynthOptions,
) -> Result<PathBuf> {
    if n < 4 {
        return Err(Error::Precondition(format!("need at least 4 samples, got {n}")));
    }
    if opts.height < 4 || opts.width < 4 || !matches!(opts.channels, 1 | 3) {
        return Err(Error::config("synthetic images need at least 4×4 pixels and 1 or 3 channels"));
    }
    let images = out_dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = vocabulary(&mut rng);
    let (n_train, n_val, n_test) = split_sizes(n);
    let ext = if opts.channels == 1 { "pgm" } else { "ppm" };

    let mut rows = Vec::with_capacity(n);
    let mut index = 0;
    for (split, size) in [
        (Split::Train, n_train),
        (Split::Validation, n_val),
        (Split::Test, n_test),
    ] {
        let mut labels: Vec<Label> = (0..size).map(|i| Label::from_bool(i % 2 == 0)).collect();
        labels.shuffle(&mut rng);
        for label in labels {
            let troll = label == Label::Troll;
            let id = format!("synth-{index:05}");
            let text = caption(&mut rng, &words, troll && mode.text_carries_label());
            let img = image(&mut rng, opts, troll && mode.image_carries_label())?;
            let file = format!("{id}.{ext}");
            img.write(&images.join(&file))?;
            rows.push((id, split, format!("images/{file}"), text, label));
            index += 1;
        }
    }
    let manifest = out_dir.join("manifest.csv");
    write_manifest(&manifest, &rows)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_manifest, read_manifest, ImageOptions, SplitCounts};
    use crate::tensor::Tensor;

    #[test]
    fn text_signal_marks_exactly_the_trolls() {
        let dir = tempfile::tempdir().unwrap();
        let path = synth_generate(SynthMode::TextSignal, 40, 3, dir.path(), SynthOptions::default()).unwrap();
        for row in read_manifest(&path).unwrap() {
            let marked = row.caption.split(' ').any(|w| w == MARKER);
            assert_eq!(marked, row.label == Label::Troll, "{row:?}");
        }
    }

    #[test]
    fn image_signal_squares_only_on_trolls() {
        let dir = tempfile::tempdir().unwrap();
        let opts = SynthOptions { height: 16, width: 16, channels: 1 };
        let path = synth_generate(SynthMode::ImageSignal, 30, 5, dir.path(), opts).unwrap();
        for row in read_manifest(&path).unwrap() {
            assert!(!row.caption.contains(MARKER));
            let img = RawImage::read(&row.image).unwrap();
            // A 4×4 block of 255 somewhere in the top-left 8×8 quadrant.
            let has_square = (0..=4).any(|oy| {
                (0..=4).any(|ox| (0..4).all(|y| (0..4).all(|x| img.get(oy + y, ox + x, 0) == 255)))
            });
            if row.label == Label::Troll {
                assert!(has_square);
            }
        }
    }

    #[test]
    fn balanced_deterministic_splits() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let pa = synth_generate(SynthMode::Noise, 53, 11, a.path(), SynthOptions::default()).unwrap();
        let pb = synth_generate(SynthMode::Noise, 53, 11, b.path(), SynthOptions::default()).unwrap();
        assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
        let rows = read_manifest(&pa).unwrap();
        let counts = SplitCounts::from_rows(&rows);
        for (t, n) in [counts.train, counts.validation, counts.test] {
            assert!(t.abs_diff(n) <= 1);
        }
        assert_eq!(
            (counts.train.0 + counts.train.1, counts.validation.0 + counts.validation.1),
            (42, 5)
        );
    }

    #[test]
    fn decoding_reproduces_generated_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let path = synth_generate(SynthMode::Both, 4, 1, dir.path(), SynthOptions::default()).unwrap();
        let rows = read_manifest(&path).unwrap();
        let raw = RawImage::read(&rows[0].image).unwrap();
        let set = load_manifest::<f64>(
            &path,
            ImageOptions { height: 64, width: 64, center_crop_frac: 1.0 },
        )
        .unwrap();
        let decoded: &Tensor<f64> = &set.train[0].image;
        for c in 0..3 {
            for y in 0..64 {
                for x in 0..64 {
                    let v = decoded.at(&[c, y, x]).unwrap();
                    assert_eq!(v, raw.get(y, x, c) as f64 / 255.0);
                }
            }
        }
    }

    #[test]
    fn too_few_samples() {
        let dir = tempfile::tempdir().unwrap();
        assert!(synth_generate(SynthMode::Noise, 3, 0, dir.path(), SynthOptions::default()).is_err());
    }
}
