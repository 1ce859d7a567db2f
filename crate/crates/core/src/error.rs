use std::path::PathBuf;

use thiserror::Error;

/// Error type shared by every module of the crate.
#[derive(Debug, Error)]
pub enum PsaError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error(
        "eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:.3e})"
    )]
    Convergence { sweeps: usize, off_norm: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Training { epoch: usize, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PsaError {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        PsaError::Dimension(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        PsaError::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PsaError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the file system rather than of the inputs.
    pub fn is_io(&self) -> bool {
        matches!(self, PsaError::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, PsaError>;
