//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any operation in this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes of two operands do not agree for the named operation.
    #[error("{op}: dimension mismatch, left is {lhs_rows}x{lhs_cols}, right is {rhs_rows}x{rhs_cols}")]
    DimMismatch {
        op: &'static str,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },

    /// A dimension, count, or scale argument is invalid.
    #[error("invalid argument for {what}: {details}")]
    InvalidArgument { what: &'static str, details: String },

    /// Slice boundary must satisfy 0 < at < len.
    #[error("slice boundary {at} not strictly inside dimension of size {len}")]
    BadBoundary { at: usize, len: usize },

    /// Exact-disjoint construction needs an even rank.
    #[error("rank must be even in exact-disjoint mode, got {0}")]
    OddRank(usize),

    /// A content or style id is outside the task's range.
    #[error("{what} id {id} out of range, task has {count}")]
    IdOutOfRange {
        what: &'static str,
        id: usize,
        count: usize,
    },

    /// Up/down halves come from different frozen constructions.
    #[error("incompatible frozen subspaces: {0}")]
    FrozenMismatch(String),

    /// Frozen blocks do not match their seed regeneration.
    #[error("corrupt or tampered frozen blocks: {0}")]
    FrozenTamper(String),

    /// Measured AC leakage exceeds the declared orthogonality bound.
    #[error("orthogonality bound violated: measured {measured:.6e} > bound {bound:.6e}")]
    OrthBound { measured: f64, bound: f64 },

    /// A training procedure was asked for more aux partners than the task has.
    #[error("not enough {what} for auxiliary batches: need {needed}, task has {available}")]
    NotEnoughPartners {
        what: &'static str,
        needed: usize,
        available: usize,
    },

    /// Multi-correspondence loss requires at least one aux batch.
    #[error("empty auxiliary batch list")]
    EmptyAux,

    /// Two paired lists have different lengths.
    #[error("length mismatch for {what}: got {got}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },

    /// A file failed structural validation on load.
    #[error("corrupt file {path}: {details}")]
    CorruptFile { path: String, details: String },

    /// An underlying I/O failure.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A library-produced value was NaN or infinite.
    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),
}

pub type Result<T> = std::result::Result<T, Error>;
