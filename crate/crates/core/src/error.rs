use thiserror::Error;

use crate::panel::MonthIndex;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}: row {row}: {message}")]
    Parse {
        file: String,
        row: usize,
        message: String,
    },

    #[error("{file}: empty file")]
    EmptyFile { file: String },

    #[error("invalid month '{0}', expected YYYY-MM")]
    InvalidMonth(String),

    #[error("insufficient data: {have} overlapping observations, need at least {need}")]
    InsufficientData { have: usize, need: usize },

    #[error("degenerate factor: zero variance over the fitting window")]
    DegenerateFactor,

    #[error("singular system: {0}")]
    Singular(String),

    #[error("unknown feature '{0}'")]
    UnknownFeature(String),

    #[error("unknown fund '{0}'")]
    UnknownFund(String),

    #[error("unknown factor '{0}'")]
    UnknownFactor(String),

    #[error("no relevant factor for fund '{fund}' at {as_of}")]
    NoRelevantFactor { fund: String, as_of: MonthIndex },

    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid synthetic spec: key '{key}': {message}")]
    InvalidSpec { key: String, message: String },

    #[error("invalid config: key '{key}': {message}")]
    InvalidConfig { key: String, message: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage: stage.to_string(),
                source: Box::new(e),
            },
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

/// `(key, message)` of a failed typed JSON parse.
pub(crate) fn json_key_error(e: serde_path_to_error::Error<serde_json::Error>) -> (String, String) {
    let path = e.path().to_string();
    let inner = e.into_inner().to_string();
    let key = match inner.split('`').nth(1) {
        // the path already ends at an unknown key, but stops short of a missing one
        Some(k) if inner.starts_with("missing field") => {
            if path == "." {
                k.to_string()
            } else {
                format!("{path}.{k}")
            }
        }
        _ => path,
    };
    (key, inner)
}
