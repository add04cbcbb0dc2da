//! Crate-wide error type.
//!
//! Every fallible operation returns [`Error`]. Variants carry enough context
//! (byte offsets, shapes, iteration numbers) for a caller to report the
//! failure without re-deriving it.

use std::io;

/// Errors produced by tensor construction, Netpbm I/O, metrics, losses,
/// sweeps, and training.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    /// The magic number is something other than binary P5/P6.
    #[error("unsupported netpbm format {magic:?} at byte {offset}: only binary P5/P6 are accepted")]
    UnsupportedPpmFormat { magic: String, offset: usize },

    #[error("malformed netpbm header at byte {offset}: {detail}")]
    MalformedPpmHeader { offset: usize, detail: String },

    #[error("unsupported netpbm maxval {maxval} at byte {offset}: only 255 is accepted")]
    UnsupportedPpmMaxval { maxval: u64, offset: usize },

    /// The pixel payload ended early; `offset` is where the data ran out.
    #[error("truncated netpbm payload at byte {offset}: expected {expected} payload bytes, found {actual}")]
    TruncatedPpmPayload {
        offset: usize,
        expected: usize,
        actual: usize,
    },

    #[error("shape mismatch: expected (channels, height, width) {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: [usize; 3],
        actual: [usize; 3],
    },

    #[error("expected {expected} channel(s), got {actual}")]
    ChannelMismatch { expected: usize, actual: usize },

    #[error("tensor has zero elements")]
    EmptyTensor,

    #[error("tensor data length {actual} does not match shape {shape:?} ({expected} elements)")]
    DataLength {
        shape: [usize; 3],
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {context}")]
    NonFinite { context: &'static str },

    #[error("{context}[{index}] = {value} is outside [0, 1]")]
    OutOfRange {
        context: &'static str,
        index: usize,
        value: f64,
    },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("image {height}x{width} is too small for a {window}x{window} window")]
    WindowTooLarge {
        height: usize,
        width: usize,
        window: usize,
    },

    #[error("finite-difference precondition violated: {detail}")]
    FdPrecondition { detail: String },

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("non-finite parameters after update at iteration {iteration}")]
    NonFiniteParameters { iteration: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
