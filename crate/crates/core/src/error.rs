use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("schema error: source column `{0}` not found in header")]
    MissingColumn(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("row {row}: cannot parse field `{field}` from {value:?}")]
    Parse {
        row: usize,
        field: String,
        value: String,
    },
    #[error("unknown description code(s): {}", .0.join(", "))]
    UnknownCodes(Vec<String>),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate table: {0}")]
    DegenerateTable(String),
    #[error("2x2 table has a zero cell; the Wald interval is undefined, use an exact method")]
    ZeroCell,
    #[error("event {index}: missing value for `{covariate}`")]
    MissingCovariate { index: usize, covariate: String },
    #[error("fixed-effects design is rank deficient; collinear column(s): {}", .0.join(", "))]
    RankDeficient(Vec<String>),
    #[error("matrix not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("unknown term `{0}`")]
    UnknownTerm(String),
    #[error("unknown grouping factor `{0}`")]
    UnknownGroup(String),
    #[error("family error: {0}")]
    Family(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("bootstrap aborted: {failures} of {total} replicates failed; inspect the model before bootstrapping")]
    BootstrapFailures { failures: usize, total: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Name of the failed pipeline stage, if this is a stage error.
    pub fn stage(&self) -> Option<&str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}
