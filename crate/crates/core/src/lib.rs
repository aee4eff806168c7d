//! Image-and-caption troll meme classification: a small tensor library with
//! reverse-mode autodiff, BPE tokenizer, transformer encoders, fusion
//! heads, training loops, data loading, and evaluation.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`). Training
//! runs at `f32`; gradient checks run the same graphs at `f64`.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoders;
pub mod error;
pub mod experiment;
pub mod fusion;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod scalar;
pub mod tensor;
pub mod tokenizer;
pub mod training;

pub use autodiff::{Activation, Graph, Var};
pub use data::{Label, Sample, Split, SplitSet};
pub use error::{Error, Result};
pub use fusion::{Architecture, FusionConfig};
pub use metrics::{ConfusionMatrix, EvalReport};
pub use model::{Discriminator, Input, Model, ModelConfig};
pub use scalar::Scalar;
pub use tensor::Tensor;
pub use tokenizer::{TokenSequence, Vocab};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
pub type Model32 = Model<f32>;
pub type Model64 = Model<f64>;
