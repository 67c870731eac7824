use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = SolarError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SolarError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{what} {value} out of range (limit {limit})")]
    OutOfRange {
        what: &'static str,
        value: usize,
        limit: usize,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("document has no labels")]
    EmptyLabels,

    #[error("chunk {chunk}: non-finite {what} at epoch {epoch} (learning rate too high?)")]
    NonFinite {
        chunk: usize,
        epoch: usize,
        what: &'static str,
    },

    #[error("chunk {chunk}: non-finite gradient")]
    NonFiniteGradient { chunk: usize },

    #[error("training failed for chunk(s) {chunks:?}: {first}")]
    ChunkFailures {
        chunks: Vec<usize>,
        first: Box<SolarError>,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{0}")]
    Format(String),

    #[error("checksum mismatch for {path}: manifest has {expected}, file has {actual}")]
    Checksum {
        path: PathBuf,
        expected: String,
        actual: String,
    },

    #[error("no evaluable queries (all {skipped} had empty ground truth)")]
    NoQueries { skipped: usize },

    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl SolarError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SolarError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        SolarError::InvalidConfig(msg.into())
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            SolarError::InvalidConfig(_)
                | SolarError::OutOfRange { .. }
                | SolarError::DimensionMismatch { .. }
                | SolarError::Parse { .. }
                | SolarError::Format(_)
        )
    }
}

pub(crate) fn check_index(what: &'static str, value: usize, limit: usize) -> Result<()> {
    if value < limit {
        Ok(())
    } else {
        Err(SolarError::OutOfRange { what, value, limit })
    }
}
