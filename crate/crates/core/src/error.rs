use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Dataset shape problems: mismatched row counts, too few views, bad labels.
    #[error("structural error: {0}")]
    Structure(String),
    #[error("{file}: unparseable cell at row {row}, column {col}: {cell:?}")]
    Parse {
        file: String,
        row: usize,
        col: usize,
        cell: String,
    },
    #[error("{file}: non-finite value at row {row}, column {col}")]
    NonFinite {
        file: String,
        row: usize,
        col: usize,
    },
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error("evaluation failed: {0}")]
    Evaluation(String),
    #[error("malformed file {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the CLI: 2 for bad input or configuration,
    /// 3 for training failures, 4 for evaluation failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Training(_) => 3,
            Error::Evaluation(_) => 4,
            _ => 2,
        }
    }
}
