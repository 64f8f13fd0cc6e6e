use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the reconstruction pipeline.
///
/// Display strings lead with the variant name so command-line diagnostics
/// stay greppable.
#[derive(Debug, Error)]
pub enum Error {
    #[error("InvalidGeometry: {0}")]
    InvalidGeometry(String),
    #[error("DimMismatch: expected {expected}, found {found}")]
    DimMismatch { expected: String, found: String },
    #[error("AcsTooSmall: {acs_len} ACS lines cannot host a {span}-line calibration window")]
    AcsTooSmall { acs_len: usize, span: usize },
    #[error("SingularSystem: calibration normal matrix for offset {offset} is rank deficient (rank {rank} of {cols})")]
    SingularSystem {
        offset: usize,
        rank: usize,
        cols: usize,
    },
    #[error("MissingOffsetWeights: kernel has no weights for offset {0}")]
    MissingOffsetWeights(usize),
    #[error("TooSmall: {0}")]
    TooSmall(String),
    #[error("NonFiniteInput: {0}")]
    NonFiniteInput(String),
    #[error("InvalidArgument: {0}")]
    InvalidArgument(String),
    #[error("BadMagic: expected \"GPKS\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("UnsupportedVersion: file version {found}, maximum supported version is {max}")]
    UnsupportedVersion { found: u16, max: u16 },
    #[error("BadKind: unknown container kind {0}")]
    BadKind(u16),
    #[error("TruncatedPayload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },
    #[error("DimOverflow: {0}")]
    DimOverflow(String),
    #[error("Io: {0}")]
    Io(#[from] io::Error),
    #[error("Json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(expected: impl std::fmt::Debug, found: impl std::fmt::Debug) -> Self {
        Error::DimMismatch {
            expected: format!("{expected:?}"),
            found: format!("{found:?}"),
        }
    }
}
