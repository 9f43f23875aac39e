use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid shape {shape:?} for {len} elements (extents must be >= 1, rank >= 1)")]
    InvalidShape { shape: Vec<usize>, len: usize },

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("{op}: incompatible shape {got:?}, expected {expected:?}")]
    IncompatibleShape {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("axis {axis} out of range for rank {rank}")]
    AxisOutOfRange { axis: usize, rank: usize },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("class index {index} out of range for {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },

    #[error("GradCAM requires a convolutional layer")]
    NoConvLayer,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn network(msg: impl Into<String>) -> Self {
        Error::InvalidNetwork(msg.into())
    }
}
