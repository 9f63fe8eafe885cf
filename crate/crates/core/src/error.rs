use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("signature mask is empty")]
    EmptySignature,

    #[error("faint scan: nothing survived thresholding in `{source_id}`")]
    FaintScan { source_id: String },

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("unknown community label `{0}`")]
    UnknownCommunity(String),

    #[error("duplicate source id `{0}`")]
    DuplicateSource(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn param(msg: impl Into<String>) -> Self {
        Error::Param(msg.into())
    }

    /// Short machine-readable tag, used by the CLI error envelope.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Param(_) => "parameter",
            Error::Shape { .. } => "shape",
            Error::EmptySignature => "empty_signature",
            Error::FaintScan { .. } => "faint_scan",
            Error::Empty(_) => "empty",
            Error::UnknownCommunity(_) => "unknown_community",
            Error::DuplicateSource(_) => "duplicate_source",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::Image(_) => "image",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
