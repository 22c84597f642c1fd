//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by model construction, estimation, and I/O routines.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed arguments: dimension mismatches, non-finite values,
    /// out-of-range parameters.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// `diagonalize` could not produce a trusted eigenbasis. Callers fall
    /// back to the augmented-exponential path.
    #[error("matrix is not diagonalizable within tolerance (condition estimate {cond:.2e})")]
    NotDiagonalizable {
        /// Condition estimate of the rejected eigenvector basis.
        cond: f64,
    },

    /// A linear solve that is well-posed for valid inputs failed; indicates
    /// a corrupted message or covariance.
    #[error("conditioning failure: {0}")]
    Conditioning(String),

    /// Zero observation-noise variance with an observation present.
    #[error("exact observations (zero noise variance) are unsupported")]
    ExactObservation,

    /// Operation defined only for Hurwitz state matrices.
    #[error("requires a Hurwitz state matrix: {0}")]
    StabilityRequired(String),

    /// Valid input outside the implemented scope.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Size guard of the dense reference solver.
    #[error("problem size {unknowns} exceeds the dense-solver guard of {limit} unknowns")]
    SizeGuard {
        /// Requested number of unknowns.
        unknowns: usize,
        /// Hard limit of the dense solver.
        limit: usize,
    },

    /// Prior covariance unusable for the requested solve.
    #[error("improper prior: {0}")]
    ImproperPrior(String),

    /// A verification command found a genuine mismatch.
    #[error("check failed: {0}")]
    CheckFailed(String),

    /// Config or CSV parse problem, with file location.
    #[error("{path}:{line}: {msg}")]
    Parse {
        /// File that failed to parse.
        path: String,
        /// 1-based line number.
        line: usize,
        /// What went wrong.
        msg: String,
    },

    /// Command-line usage problem (bad flag combination).
    #[error("usage: {0}")]
    Usage(String),

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
