//! Error taxonomy shared by the whole crate.
//!
//! Errors fall into three groups: degenerate statistical situations that the
//! caller must decide how to handle (`DegenerateStandardization`,
//! `StatisticDegenerate`, `EverythingAnomalous`, `NonStationaryFit`,
//! `SignalOutOfRange`), invalid requests (`DomainError`, `PlanTooLarge`,
//! `Parse`, `Io`), and violations of internal invariants (`Internal`), which
//! indicate a bug rather than bad input.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A standardized count had a zero denominator with a nonzero numerator,
    /// i.e. `p` was exactly 0 or 1 while the observed count disagreed with
    /// `n * p`. The 0/0 case is defined as 0 and does not error.
    #[error(
        "standardized count is degenerate: count {count} of {n} with tail probability {p} \
         (zero denominator, nonzero numerator)"
    )]
    DegenerateStandardization { count: usize, n: usize, p: f64 },

    /// Full enumeration was requested for a matrix with more cells than the
    /// enumeration cap allows.
    #[error("full enumeration handles at most {cap} cells ({} permutations), got {cells}", factorial_str(*.cap))]
    PlanTooLarge { cells: usize, cap: usize },

    /// The test statistic is invariant under permutations for this shape, so
    /// permutation calibration is impossible (single observation per stream,
    /// or a single stream).
    #[error("cannot calibrate by permutation: {reason}")]
    StatisticDegenerate { reason: String },

    /// An argument lay outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    DomainError(String),

    /// The requested signal strength is not representable in the chosen
    /// family (e.g. an exponential rate would become non-positive).
    #[error("signal out of range: theta = {theta} must be below {limit}")]
    SignalOutOfRange { theta: f64, limit: f64 },

    /// The AR(1) fit produced an autocorrelation so close to 1 that the
    /// process level is undefined.
    #[error("non-stationary AR(1) fit: a_hat = {a_hat} leaves the level undefined")]
    NonStationaryFit { a_hat: f64 },

    /// Outlier exclusion removed every stream; there is nothing left to test.
    #[error("every stream was excluded as a clear outlier")]
    EverythingAnomalous,

    /// Malformed input data; positions are 1-based.
    #[error("parse error at row {row}, column {col}: {message}")]
    Parse { row: usize, col: usize, message: String },

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// CSV encoding or decoding failure.
    #[error(transparent)]
    Csv(#[from] csv::Error),

    /// JSON encoding or decoding failure.
    #[error(transparent)]
    Json(#[from] serde_json::Error),

    /// An internal invariant was violated; this is a bug in the library.
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl Error {
    /// Build a parse error with 1-based row/column diagnostics.
    pub fn parse(row: usize, col: usize, message: impl Into<String>) -> Self {
        Error::Parse { row, col, message: message.into() }
    }
}

fn factorial_str(cap: usize) -> String {
    let mut f: u128 = 1;
    for k in 2..=cap as u128 {
        f *= k;
    }
    f.to_string()
}
