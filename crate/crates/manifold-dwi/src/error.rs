//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// File exists but is not in the supported subset (wrong dtype, endianness,
    /// compression, magic, ...). Never silently falls back.
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("malformed payload: {0}")]
    MalformedPayload(String),

    /// Input claimed to be SPD has an eigenvalue at or below the floor.
    #[error("not on manifold: smallest eigenvalue {lambda_min:.3e} <= floor")]
    NotOnManifold { lambda_min: f64 },

    #[error("degenerate tensor: all eigenvalues vanish")]
    DegenerateTensor,

    /// Leading eigenvalue tie; a principal direction cannot be extracted.
    #[error("ill-defined direction: leading eigenvalue gap {gap:.3e} below tolerance")]
    IllDefinedDirection { gap: f64 },

    #[error("outside positive orthant: c0 = {c0:.6} <= 0")]
    OutsidePositiveOrthant { c0: f64 },

    #[error("cut locus exceeded: |v| = {norm:.6} >= pi")]
    CutLocusExceeded { norm: f64 },

    #[error("not unit norm: |c| = {norm:.8}")]
    NotUnitNorm { norm: f64 },

    #[error("coefficient length {got} does not match basis size {expected}")]
    BasisSizeMismatch { got: usize, expected: usize },

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("degenerate range: volume is constant")]
    DegenerateRange,

    #[error("empty evaluation mask")]
    EmptyMask,

    #[error("empty tractogram")]
    EmptyTractogram,

    #[error("empty batch")]
    EmptyBatch,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Training loss went non-finite; the metric trace up to the failing
    /// epoch is preserved in CSV form.
    #[error("training diverged at epoch {epoch}, step {step}")]
    TrainingDiverged {
        epoch: usize,
        step: usize,
        trace_csv: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
