//! Piggybacked regenerating codes over GF(2^8) / GF(2^16).
//!
//! The crate is layered bottom-up:
//!
//! * [`gf`] — field arithmetic, dense matrices with exact Gaussian elimination,
//!   and scaled-permutation matrices.
//! * [`base`] — the (k+r, k) array code whose coding matrices are scaled digit-shift
//!   permutations; systematic nodes repair from one row class per helper.
//! * [`piggyback`] — the s-instance extension: parity cells of the last instance
//!   carry sums of earlier-instance parity cells, chosen by an injection table so
//!   that parity nodes also repair cheaply.
//! * [`balanced`] — many piggybacked instances composed over a block design so the
//!   per-helper download is identical no matter which node fails.
//! * [`meter`] — transfer ledgers. Every symbol a repair pulls from a helper goes
//!   through a metered source, so bandwidth claims are checked as exact counts.
//!
//! Node, instance, and parity indices are 0-based throughout the library. Serialized
//! forms (injection tables, block designs, shard headers) are 1-based; conversions
//! happen at those boundaries only.

pub mod balanced;
pub mod base;
pub mod gf;
pub mod meter;
mod par;
pub mod piggyback;

pub use gf::Width;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("field width mismatch: {0:?} vs {1:?}")]
    WidthMismatch(Width, Width),
    #[error("shape mismatch: {left_rows}x{left_cols} against {right_rows}x{right_cols}")]
    ShapeMismatch {
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },
    #[error("singular matrix: rank {rank} of {dim}")]
    Singular { rank: usize, dim: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("index array is not a permutation")]
    NotPermutation,
    #[error("zero scale at position {0}")]
    ZeroScale(usize),
    #[error("division by zero")]
    DivisionByZero,
    #[error("code failed the all-subsets decodability check after {attempts} attempts; first failing subset: {subset:?}")]
    MdsVerificationFailed { attempts: u32, subset: Vec<usize> },
    #[error("injection table invalid: {0}")]
    InvalidInjection(String),
    #[error("injection table is suboptimal (support sizes {0:?}); pass the explicit opt-in to use it")]
    SuboptimalInjection(Vec<usize>),
    #[error("node {0} is not available as a helper")]
    UnavailableHelper(usize),
    #[error("invalid node set: {0}")]
    InvalidNodeSet(String),
    #[error("invalid block design: {0}")]
    InvalidDesign(String),
    #[error("helper {helper} sent {got} symbols where the profile requires {expected}")]
    ProfileMismatch {
        helper: usize,
        expected: u64,
        got: u64,
    },
    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;
