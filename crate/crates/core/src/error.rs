//! Error type shared by every module in the crate.

use std::path::PathBuf;
use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An extent along a named mode did not match what the operation needs.
    #[error("{op}: extent mismatch along mode {mode}: expected {expected}, got {got}")]
    ModeMismatch {
        op: &'static str,
        mode: usize,
        expected: usize,
        got: usize,
    },

    /// Whole-shape mismatch between two operands.
    #[error("{op}: shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    /// Mode index outside the tensor's rank.
    #[error("{op}: mode {mode} out of range for a rank-{rank} tensor")]
    ModeOutOfRange {
        op: &'static str,
        mode: usize,
        rank: usize,
    },

    /// Requested decomposition rank larger than the corresponding extent.
    #[error("{op}: rank {rank} exceeds extent {extent} of mode {mode}")]
    RankExceedsExtent {
        op: &'static str,
        mode: usize,
        rank: usize,
        extent: usize,
    },

    /// Jacobi SVD failed to reach its orthogonality criterion.
    #[error("svd did not converge on a {rows}x{cols} matrix")]
    SvdNonConvergence { rows: usize, cols: usize },

    /// A non-finite value (NaN or infinity) was found where one is not allowed.
    #[error("{op}: input contains a non-finite value")]
    NonFinite { op: &'static str },

    /// Argument outside its documented domain.
    #[error("{op}: {message}")]
    InvalidArgument { op: &'static str, message: String },

    /// An operation over a stack of graph slices failed on one slice.
    #[error("slice {slice}: {source}")]
    GraphSlice {
        slice: usize,
        #[source]
        source: Box<Error>,
    },

    /// Dynamic graph evolution failed at a particular time step.
    #[error("evolution step {step}: {source}")]
    EvolveStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    /// An operation that needs at least one sample/row got none.
    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },

    /// Series too short for the requested windowing.
    #[error("series too short: {got} steps, at least {needed} required")]
    InsufficientLength { needed: usize, got: usize },

    /// CSV cell that could not be parsed (1-based row/column, header is row 1).
    #[error("{path}: row {row}, column {col}: {message}")]
    Csv {
        path: PathBuf,
        row: usize,
        col: usize,
        message: String,
    },

    /// Training loss became NaN/Inf.
    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Divergence { epoch: usize },

    /// Malformed binary artifact.
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wrap an error with the index of the graph slice it occurred on.
    pub fn in_slice(self, slice: usize) -> Error {
        Error::GraphSlice {
            slice,
            source: Box::new(self),
        }
    }

    /// Wrap an error with the evolution time step it occurred on.
    pub fn at_step(self, step: usize) -> Error {
        Error::EvolveStep {
            step,
            source: Box::new(self),
        }
    }
}
