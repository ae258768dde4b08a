use std::path::PathBuf;

/// Errors produced by the labeling pipeline and its building blocks.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("feature maps disagree on channel count: expected {expected}, view {view} has {found}")]
    MismatchedChannels {
        expected: usize,
        view: usize,
        found: usize,
    },
    #[error("degenerate norm ({norm:e}) in {what} row {row}")]
    DegenerateNorm {
        what: &'static str,
        row: usize,
        norm: f64,
    },
    #[error("no mask group has enough visible points to form a prototype")]
    EmptyPrototypeSet,
    #[error("linear system (I + beta L) could not be solved")]
    SingularSystem,
    #[error("symmetric eigendecomposition did not converge")]
    EigFailure,
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("length mismatch: {what} has {found}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("malformed {format} data: {reason}")]
    Format {
        format: &'static str,
        reason: String,
    },
    #[error("stage `{stage}` failed (input digest {digest}): {source}")]
    Stage {
        stage: &'static str,
        digest: String,
        #[source]
        source: Box<Error>,
    },
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn format(format: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            format,
            reason: reason.into(),
        }
    }

    /// True for errors caused by bad configuration or arguments rather than a
    /// failing computation.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::InvalidConfig(_) => true,
            Error::Stage { source, .. } => source.is_config_error(),
            _ => false,
        }
    }
}
