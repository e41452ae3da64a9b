//! Morphology-graph and radiograph fusion for joint severity grading.
//!
//! The crate builds a connected boundary graph from a pair of bone masks,
//! encodes it with stacked EdgeConv layers, trains a small CNN on the image,
//! and fuses both embeddings with an alignment objective that combines
//! InfoNCE with a blended MSE term. A deterministic synthetic generator
//! stands in for real radiographs.

pub mod config;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod morphograph;
pub mod nn;
pub mod pipeline;
pub mod vision;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{GradCheck, Gradients, Tape, Tensor, Var};

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Tape64 = Tape<f64>;
