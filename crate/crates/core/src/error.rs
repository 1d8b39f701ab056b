use std::path::PathBuf;

use thiserror::Error;

use crate::grid::GridDims;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimsMismatch { expected: GridDims, found: GridDims },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-binary occupancy value {value} at linear index {index}")]
    NonBinaryValue { index: usize, value: f32 },

    #[error("non-finite value at linear index {index}")]
    NonFiniteValue { index: usize },

    #[error("index {index} out of range for axis of length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("position out of bounds: {0}")]
    OutOfBounds(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("design matrix is singular or ill-conditioned (condition number {condition:e})")]
    SingularDesign { condition: f64 },

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("dataset is constant at {value} dB; normalization range is degenerate")]
    ConstantDataset { value: f64 },

    #[error("no candidate voxels to sample from")]
    EmptyCandidates,

    #[error("transmit power must be positive in linear scale")]
    NonPositivePower,

    #[error("missing channel: {0}")]
    MissingChannel(String),

    #[error("domain mismatch: {0}")]
    DomainMismatch(String),

    #[error("ground truth has zero energy")]
    ZeroEnergyTruth,

    #[error("volume too small: every axis needs at least 3 voxels, got {dims}")]
    VolumeTooSmall { dims: GridDims },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error("bad split fractions: {0}")]
    BadFractions(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
