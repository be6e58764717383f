use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical failure at iteration {iteration}: {what}")]
    Numerical { iteration: usize, what: String },

    /// Training produced a non-finite objective; the history up to the failure
    /// is kept for diagnostics.
    #[error("training diverged after {} outer iterations: {what}", history.len())]
    Diverged { what: String, history: Vec<f64> },

    #[error(transparent)]
    Data(#[from] crate::data::DataError),

    #[error(transparent)]
    ModelFile(#[from] crate::trainer::ModelFileError),

    /// The cause is part of the message rather than a separate source.
    #[error("{}: {error}", path.display())]
    Io { path: PathBuf, error: std::io::Error },

    #[error("report format error: {0}")]
    Report(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            error: source,
        }
    }
}
