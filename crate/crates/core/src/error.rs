use std::path::PathBuf;

/// Errors raised by the motion, metric, annotation and scoring routines.
#[derive(Debug, thiserror::Error)]
pub enum FidelityError {
    #[error("malformed JSON in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("schema violation in {path}: {message}")]
    Schema { path: PathBuf, message: String },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate frame {frame}: all joints coincide")]
    DegenerateFrame { frame: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("foot configuration: {0}")]
    FootConfig(String),

    #[error("projection did not converge after {iterations} iterations ({detail})")]
    NonConvergence { iterations: usize, detail: String },

    #[error("missing score for motion `{0}`")]
    MissingScore(String),

    #[error("configuration error: {0}")]
    Config(String),
}

impl FidelityError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FidelityError::Io { path: path.into(), source }
    }

    /// True for errors caused by the filesystem rather than by the data.
    pub fn is_io(&self) -> bool {
        matches!(self, FidelityError::Io { .. })
    }
}

pub type Result<T, E = FidelityError> = std::result::Result<T, E>;
