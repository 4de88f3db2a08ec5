//! Linear video tokenizer.
//!
//! Condenses per-frame visual token streams into a small fixed-size set of
//! video tokens in three stages:
//!
//! 1. **Scoring and selection** ([`svr`]): spatio-temporal attention assigns
//!    each token a significance score; the top `k` tokens survive.
//! 2. **Multi-scale pooling** ([`svr`]): shifted-window average pooling over
//!    the selected tokens at several window sizes.
//! 3. **Text-conditioned aggregation** ([`tta`]): scale-specific learnable
//!    queries, refined by self-, visual- and text-attention, drive a
//!    residual-free attention layer whose outputs are convex combinations of
//!    the pooled tokens.
//!
//! Every output token therefore carries an explicit provenance row: a
//! nonnegative, unit-sum weighting over the original frame tokens. That
//! convexity is the library's central invariant and is verified by
//! reconstruction in the test suite and in `linvt selftest`.
//!
//! The [`tensor`] module provides the dense f64 math plus a reverse-mode
//! tape; [`train`] contains a small needle-retrieval trainer that shows the
//! tokenizer learning text-conditioned condensation end to end.

// Index arithmetic reads better as explicit loops in the math kernels.
#![allow(clippy::needless_range_loop)]

pub mod cli;
pub mod error;
pub mod format;
pub mod gradcheck;
pub mod model;
pub mod rng;
pub mod segment;
pub mod selftest;
pub mod svr;
pub mod tensor;
pub mod train;
pub mod tta;

pub use error::{Error, Result};
pub use model::{Config, Model, Variant};
pub use svr::FrameTokenStream;
pub use tensor::{Tape, Tensor};
pub use tta::TextTokens;
