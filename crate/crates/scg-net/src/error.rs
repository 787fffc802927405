//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("{op}: shape mismatch, {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: domain error on value {value}")]
    Domain { op: &'static str, value: f64 },

    #[error("axis {axis} out of range for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },

    #[error("backward requires a scalar loss, got {elements} elements")]
    NonScalarLoss { elements: usize },

    #[error("conv2d: input has {input} channels, kernel expects {expected}")]
    ChannelMismatch { input: usize, expected: usize },

    #[error("pool output {out_h}x{out_w} exceeds input {in_h}x{in_w}")]
    PoolOutputTooLarge {
        out_h: usize,
        out_w: usize,
        in_h: usize,
        in_w: usize,
    },

    #[error("upsample target {out_h}x{out_w} is below input {in_h}x{in_w}")]
    DownscaleRequested {
        out_h: usize,
        out_w: usize,
        in_h: usize,
        in_w: usize,
    },

    #[error("input extent {size} is not divisible by total stride {stride}")]
    NotDivisible { size: usize, stride: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("non-finite {component} loss: {value}")]
    NonFiniteLoss { component: &'static str, value: f64 },

    #[error("training aborted at step {step}: non-finite {component} loss ({value})")]
    TrainingAborted {
        step: u64,
        component: &'static str,
        value: f64,
    },

    #[error("gcn stack: layer {layer} expects {expected} input features, got {got}")]
    DimensionChain {
        layer: usize,
        expected: usize,
        got: usize,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt file: {0}")]
    CorruptFile(String),

    #[error("unknown grad-check scope '{0}'")]
    UnknownScope(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
