use alloc::string::String;
use alloc::vec::Vec;

use crate::tensor::TensorShape;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid tensor shape {0:?}: every extent must be at least 1")]
    InvalidShape([usize; 4]),

    #[error("data length {len} does not match shape {shape} ({expected} elements)")]
    DataLength {
        shape: TensorShape,
        len: usize,
        expected: usize,
    },

    #[error("shape mismatch: {left} vs {right}")]
    ShapeMismatch { left: TensorShape, right: TensorShape },

    #[error("cannot concatenate {left} and {right}: batch and spatial extents differ")]
    ConcatMismatch { left: TensorShape, right: TensorShape },

    #[error("input has {actual} channels, layer expects {expected}")]
    ChannelMismatch { expected: usize, actual: usize },

    #[error("invalid convolution: {0}")]
    InvalidConv(String),

    #[error("convolution output would be empty for input {input}")]
    EmptyOutput { input: TensorShape },

    #[error("parameter `{name}` has {actual} values, expected {expected}")]
    ParamLength {
        name: String,
        expected: usize,
        actual: usize,
    },

    #[error("layer `{0}` has no weights loaded")]
    MissingWeights(String),

    #[error("invalid decoder configuration: {0}")]
    InvalidDecoder(String),

    #[error("skip connection shape mismatch at `{layer}`: {encoder} vs {decoder}")]
    SkipMismatch {
        layer: String,
        encoder: TensorShape,
        decoder: TensorShape,
    },

    #[error("graph is invalid: {}", .0.join("; "))]
    InvalidGraph(Vec<String>),

    #[error("no valid pixels (ground truth must be > 0 somewhere)")]
    NoValidPixels,

    #[error("calibration set is empty")]
    EmptyCalibration,

    #[error("invalid pruning request: {0}")]
    InvalidPruneRequest(String),

    #[error("pruning target unreachable; groups at their channel floor: {}", .0.join(", "))]
    PruneTargetUnreachable(Vec<String>),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("resource measurement failed: {0}")]
    Resource(String),
}
