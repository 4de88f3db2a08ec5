use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },

    #[error("tensor data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },

    #[error("{op}: channel dim {channels} is not divisible by {heads} heads")]
    HeadSplit {
        op: &'static str,
        channels: usize,
        heads: usize,
    },

    #[error("pooling window {window} (stride {stride}) invalid for sequence of length {len}")]
    Window {
        window: usize,
        stride: usize,
        len: usize,
    },

    #[error("cannot select top {k} of {n} scores")]
    Selection { k: usize, n: usize },

    #[error("{op}: non-finite value in input")]
    NumericInput { op: &'static str },

    #[error("backward requires a scalar root, got shape {shape:?}")]
    BackwardNonScalar { shape: Vec<usize> },

    #[error("backward root is not attached to this tape")]
    BackwardDetached,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("synthetic task needs {needed} needle slots but the stream has only {available}")]
    Capacity { needed: usize, available: usize },

    #[error("training diverged at step {step}: loss is not finite")]
    Divergence { step: usize },

    #[error("corrupt file: {0}")]
    CorruptFile(String),

    #[error("weight file version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("weight entry `{name}`: expected shape {expected:?}, file has {found:?}")]
    WeightShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("weight file does not match config: {0}")]
    WeightLayout(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
