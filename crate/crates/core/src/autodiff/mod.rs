//! Tape-based reverse-mode differentiation.

pub mod gradcheck;
mod graph;

pub use graph::{gelu, sigmoid, Activation, Graph, Var, PROB_CLAMP};
