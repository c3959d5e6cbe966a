// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used by front-ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("record {index} has no raw rating to binarize")]
    MissingRating { index: usize },

    #[error("record {index} has no label")]
    Unlabeled { index: usize },

    #[error("index {index} out of range for {len} records")]
    OutOfRange { index: usize, len: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("parameter alignment mismatch: expected {expected} values, got {got}")]
    Alignment { expected: usize, got: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidConfig(_) | Error::UnsupportedModel(_) | Error::Alignment { .. } => ErrorClass::Config,
            Error::Divergence { .. } | Error::NonFinite(_) | Error::UndefinedMetric(_) => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }
}
