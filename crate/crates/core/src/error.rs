use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used by the harness to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl ErrorClass {
    /// 1 usage, 2 data, 3 numeric failure.
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorClass::Usage => 1,
            ErrorClass::Data => 2,
            ErrorClass::Numeric => 3,
        }
    }
}

#[derive(Debug, Error)]
pub enum FvecError {
    #[error("bad magic {found:?}, expected \"FVEC\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported FVEC version {found}, expected 1")]
    VersionMismatch { found: u32 },
    #[error("truncated FVEC file: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error("FVEC file has trailing bytes: expected {expected}, found {found}")]
    TrailingBytes { expected: u64, found: u64 },
    #[error("FVEC dimension mismatch: header says {header}, sample has {sample}")]
    DimMismatch { header: usize, sample: usize },
    #[error("label {0} does not fit in 31 bits")]
    LabelRange(u32),
    #[error("FVEC header declares dim 0")]
    ZeroDim,
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad checkpoint magic {found:?}, expected \"PCKP\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported checkpoint version {found}, expected 1")]
    VersionMismatch { found: u32 },
    #[error("truncated checkpoint at byte {offset}")]
    Truncated { offset: usize },
    #[error("{0} trailing bytes after checkpoint payload")]
    TrailingBytes(usize),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("zero-norm vector where a direction is required")]
    ZeroNorm,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("negative variance {value} at coordinate {index}")]
    NegativeVariance { index: usize, value: f64 },
    #[error("negative feature {value} at coordinate {index}; features must be rectified")]
    NegativeFeature { index: usize, value: f64 },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("embedding {index} is not unit norm (norm {norm})")]
    NonUnitEmbedding { index: usize, norm: f64 },
    #[error("class {0} was already seen in an earlier session")]
    ClassAlreadySeen(u32),
    #[error("class {0} has no prototype")]
    MissingPrototype(u32),
    #[error("class {class} has {count} samples, need at least {required}")]
    InsufficientSamples { class: u32, count: u64, required: u64 },
    #[error("label {0} is not a base class")]
    NonBaseLabel(u32),
    #[error("partition: {0}")]
    Partition(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value detected in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Fvec(#[from] FvecError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub fn io(context: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Stable machine-readable code, carried over the wire.
    pub fn code(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::ZeroNorm => "zero_norm",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NegativeVariance { .. } => "negative_variance",
            Error::NegativeFeature { .. } => "negative_feature",
            Error::LabelOutOfRange { .. } => "label_out_of_range",
            Error::Empty(_) => "empty_input",
            Error::NonUnitEmbedding { .. } => "non_unit_embedding",
            Error::ClassAlreadySeen(_) => "class_already_seen",
            Error::MissingPrototype(_) => "missing_prototype",
            Error::InsufficientSamples { .. } => "insufficient_samples",
            Error::NonBaseLabel(_) => "non_base_label",
            Error::Partition(_) => "partition",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::Fvec(e) => match e {
                FvecError::BadMagic { .. } => "fvec_bad_magic",
                FvecError::VersionMismatch { .. } => "fvec_version_mismatch",
                FvecError::Truncated { .. } => "fvec_truncated",
                FvecError::TrailingBytes { .. } => "fvec_trailing_bytes",
                FvecError::DimMismatch { .. } => "fvec_dim_mismatch",
                FvecError::LabelRange(_) => "fvec_label_range",
                FvecError::ZeroDim => "fvec_zero_dim",
            },
            Error::Checkpoint(e) => match e {
                CheckpointError::BadMagic { .. } => "checkpoint_bad_magic",
                CheckpointError::VersionMismatch { .. } => "checkpoint_version_mismatch",
                CheckpointError::Truncated { .. } => "checkpoint_truncated",
                CheckpointError::TrailingBytes(_) => "checkpoint_trailing_bytes",
                CheckpointError::Malformed(_) => "checkpoint_malformed",
            },
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Config(_) => "config",
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::NonFinite(_) => ErrorClass::Numeric,
            Error::Config(_) | Error::Partition(_) => ErrorClass::Usage,
            _ => ErrorClass::Data,
        }
    }
}

/// Fails with [`Error::NonFinite`] if any entry is NaN or infinite.
pub(crate) fn ensure_finite(values: &[f64], what: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}
