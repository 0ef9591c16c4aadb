use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every stage of the toolkit.
#[derive(Debug, Error)]
pub enum SfsError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("zero variance in image {0}")]
    ZeroVariance(usize),

    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: u8, num_classes: usize },

    #[error("non-finite gradient in parameter tensor `{0}`")]
    NonFiniteGradient(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("class(es) {classes:?} starved: {detail}; lower rho")]
    StarvedClass { classes: Vec<usize>, detail: String },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SfsError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SfsError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numbers going bad (NaN, divergence,
    /// degenerate fits) rather than by bad inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            SfsError::Numerical(_)
                | SfsError::NonFiniteGradient(_)
                | SfsError::ZeroVariance(_)
                | SfsError::StarvedClass { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, SfsError>;
