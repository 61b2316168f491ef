//! Error type shared across the toolkit.
//!
//! Every failure is classified as either a user-facing problem (bad flags,
//! malformed data, estimator preconditions not met) or an internal fault.
//! The CLI maps the former to exit code 2 and the latter to exit code 1.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input file does not match the declared schema (missing column,
    /// unparseable field). The message names the column and row.
    #[error("schema error: {0}")]
    Schema(String),

    /// Data violates a structural invariant (duplicate unit-time pair,
    /// treatment reversal, heterogeneous onsets in a basic design, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// An estimator needs a (group, period) cell that has no observations.
    #[error("empty cell: group {group}, period {time}")]
    EmptyCell { group: String, time: i64 },

    /// The request itself is malformed for the given data (pre-trend test at
    /// or after the onset, difference order out of range, missing periods).
    #[error("misuse: {0}")]
    Misuse(String),

    /// The weighted combination is undefined: the weight-matrix row sums
    /// cancel, so no normalized weights exist.
    #[error("degenerate weights: 1'W1 = {denom:.3e} is numerically zero")]
    DegenerateWeights { denom: f64 },

    /// A covariance matrix cannot be inverted reliably.
    #[error("near-singular covariance: condition number {cond:.3e} (min eigenvalue {min_eig:.3e})")]
    NearSingularVcov { cond: f64, min_eig: f64 },

    /// The regression design matrix is rank deficient; the named terms are
    /// collinear with earlier ones.
    #[error("rank-deficient design: collinear terms {terms:?}")]
    RankDeficient { terms: Vec<String> },

    /// A staggered-adoption period has no not-yet-treated units to compare
    /// against.
    #[error("no clean controls for adoption period {t} at lead {s}")]
    NoCleanControl { t: i64, s: u32 },

    /// Too many bootstrap replicates hit empty cells even after redraws.
    #[error("unstable resampling: {degenerate} of {total} replicates degenerate (limit {limit})")]
    UnstableResampling {
        degenerate: usize,
        total: usize,
        limit: usize,
    },

    /// Bad command-line flags or option combinations.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A numerical routine failed in a way that indicates a bug rather than
    /// bad input.
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    /// CLI exit code: 2 for user errors, 1 for internal faults.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Internal(_) => 1,
            _ => 2,
        }
    }
}
