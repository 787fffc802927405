//! Self-constructing graph network for dense semantic labeling.
//!
//! The model learns a weighted latent graph directly from a 2D feature map
//! (no prior graph required), propagates pooled node features with graph
//! convolutions over that graph, and projects the fused node predictions
//! back to per-pixel logits. Everything runs on a small tape-based autodiff
//! core, so the whole pipeline trains end-to-end on CPU.
//!
//! Module map:
//! - [`tensor`]: dense f64 tensors, reverse-mode autodiff, TSR v1 files
//! - [`nn`]: conv2d, batch norm, adaptive average pooling, bilinear upsampling
//! - [`scg`]: the self-constructing graph module and its two regularizers
//! - [`gcn`]: graph convolution layers and adjacency normalization
//! - [`model`]: backbone + SCG + GCN assembly into per-pixel logits
//! - [`loss`], [`metrics`]: dice loss, total loss, confusion-matrix metrics
//! - [`scene`], [`optim`], [`train`], [`checkpoint`], [`gradcheck`],
//!   [`config`], [`pnm`]: the synthetic-scene training harness

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod gcn;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod pnm;
pub mod scene;
pub mod scg;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{IntTensor, Tensor};

/// Additive constant for the logs and divisions in the graph losses.
pub const EPS_NUM: f64 = 1e-7;

/// Train/eval switch; batch normalization and latent sampling branch on it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
