use std::path::PathBuf;

/// Faults raised by the core library. The variants follow the fault classes
/// used across the crate: shape problems, bad configuration, misuse of an API,
/// bad input data and numerical breakdown.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension fault: {0}")]
    Dimension(String),

    #[error("configuration fault: {0}")]
    Config(String),

    #[error("usage fault: {0}")]
    Usage(String),

    #[error("index fault: {what} = {index} outside {lo}..={hi}")]
    Index {
        what: &'static str,
        index: usize,
        lo: usize,
        hi: usize,
    },

    #[error("optimizer state fault: {0}")]
    State(String),

    #[error("data fault: {0}")]
    Data(String),

    #[error("numeric fault: {0}")]
    Numeric(String),

    #[error("singularity fault: {0}")]
    Singularity(String),

    #[error("missing input: {}", .0.display())]
    Missing(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
