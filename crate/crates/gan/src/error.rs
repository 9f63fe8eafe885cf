use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum GanError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },
    #[error("non-finite {what} at critic step {step}")]
    NonFinite { what: String, step: u64 },
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] colsig_core::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl GanError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        GanError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            GanError::Config(_) => "config",
            GanError::Shape { .. } => "shape",
            GanError::NonFinite { .. } => "non_finite",
            GanError::Checkpoint { .. } => "checkpoint",
            GanError::Io { .. } => "io",
            GanError::Core(e) => e.kind(),
            GanError::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, GanError>;
