//! Samples, splits, manifest ingestion, image decoding, and synthetic data.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub mod image;
pub mod manifest;
pub mod synth;

pub use image::{decode_image, split_vertical, RawImage};
pub use manifest::{load_manifest, read_manifest, ImageOptions, ManifestRow};
pub use synth::{synth_generate, SynthMode, SynthOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    NonTroll = 0,
    Troll = 1,
}

impl Label {
    pub fn from_bool(troll: bool) -> Self {
        if troll {
            Label::Troll
        } else {
            Label::NonTroll
        }
    }

    /// Decision rule: troll iff `p >= 0.5`.
    pub fn from_probability(p: f64) -> Self {
        Label::from_bool(p >= 0.5)
    }

    pub fn target(self) -> f64 {
        match self {
            Label::Troll => 1.0,
            Label::NonTroll => 0.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Troll => "troll",
            Label::NonTroll => "non_troll",
        }
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "troll" => Ok(Label::Troll),
            "non_troll" => Ok(Label::NonTroll),
            other => Err(Error::Input(format!("unknown label `{other}`"))),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::Input(format!("unknown split `{other}`"))),
        }
    }
}

/// A decoded meme: `image` is `C×H×W` in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct Sample<T> {
    pub id: String,
    pub image: Tensor<T>,
    pub caption: String,
    pub label: Label,
}

#[derive(Clone, Debug)]
pub struct SplitSet<T> {
    pub train: Vec<Sample<T>>,
    pub validation: Vec<Sample<T>>,
    pub test: Vec<Sample<T>>,
}

impl<T> Default for SplitSet<T> {
    fn default() -> Self {
        SplitSet {
            train: Vec::new(),
            validation: Vec::new(),
            test: Vec::new(),
        }
    }
}

/// Per-split `(troll, non_troll)` counts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: (usize, usize),
    pub validation: (usize, usize),
    pub test: (usize, usize),
}

impl fmt::Display for SplitCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "class      train  validation  test")?;
        writeln!(
            f,
            "troll      {:>5}  {:>10}  {:>4}",
            self.train.0, self.validation.0, self.test.0
        )?;
        writeln!(
            f,
            "non_troll  {:>5}  {:>10}  {:>4}",
            self.train.1, self.validation.1, self.test.1
        )?;
        write!(
            f,
            "total      {:>5}  {:>10}  {:>4}",
            self.train.0 + self.train.1,
            self.validation.0 + self.validation.1,
            self.test.0 + self.test.1
        )
    }
}

fn class_counts<'a>(labels: impl Iterator<Item = &'a Label>) -> (usize, usize) {
    labels.fold((0, 0), |(t, n), l| match l {
        Label::Troll => (t + 1, n),
        Label::NonTroll => (t, n + 1),
    })
}

impl SplitCounts {
    pub fn from_rows(rows: &[ManifestRow]) -> Self {
        let of = |s: Split| class_counts(rows.iter().filter(|r| r.split == s).map(|r| &r.label));
        SplitCounts {
            train: of(Split::Train),
            validation: of(Split::Validation),
            test: of(Split::Test),
        }
    }
}

impl<T> SplitSet<T> {
    pub fn split(&self, s: Split) -> &[Sample<T>] {
        match s {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }

    pub fn split_mut(&mut self, s: Split) -> &mut Vec<Sample<T>> {
        match s {
            Split::Train => &mut self.train,
            Split::Validation => &mut self.validation,
            Split::Test => &mut self.test,
        }
    }

    pub fn counts(&self) -> SplitCounts {
        let of = |s: &[Sample<T>]| class_counts(s.iter().map(|x| &x.label));
        SplitCounts {
            train: of(&self.train),
            validation: of(&self.validation),
            test: of(&self.test),
        }
    }
}
