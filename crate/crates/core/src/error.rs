use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cycle detected: {}", .0.join(" -> "))]
    CycleDetected(Vec<String>),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("duplicate node `{0}`")]
    DuplicateNode(String),

    #[error("duplicate edge `{0}` -> `{1}`")]
    DuplicateEdge(String, String),

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: usize, found: usize },

    #[error("degenerate training data: {0}")]
    DegenerateData(String),

    #[error("classifier training data contains a single class")]
    SingleClassData,

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("key sets do not match: {0}")]
    KeyMismatch(String),

    #[error("feasibility spec incompatible with graph: {0}")]
    IncompatibleSpec(String),

    #[error("invalid constraint for `{node}`: {reason}")]
    InvalidConstraint { node: String, reason: String },

    #[error("loss became non-finite at iteration {0}")]
    NonFiniteLoss(usize),

    #[error("empty input")]
    EmptyInput,

    #[error("zero MAD for feature `{0}`")]
    ZeroMad(String),

    #[error("unparseable value at row {row}, column `{column}`: {value:?}")]
    UnparseableValue {
        row: usize,
        column: String,
        value: String,
    },

    #[error("missing value at row {row}, column `{column}`")]
    MissingValue { row: usize, column: String },

    #[error("empty file {0}")]
    EmptyFile(PathBuf),

    #[error("parse error in {path} at line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

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

    pub(crate) fn stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }

    /// True for errors caused by malformed inputs (configs, graphs, data
    /// files) rather than failures while computing.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Stage { source, .. } => source.is_validation(),
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            Error::CycleDetected(_)
            | Error::UnknownNode(_)
            | Error::DuplicateNode(_)
            | Error::DuplicateEdge(..)
            | Error::MissingColumn(_)
            | Error::KeyMismatch(_)
            | Error::IncompatibleSpec(_)
            | Error::InvalidConstraint { .. }
            | Error::UnparseableValue { .. }
            | Error::MissingValue { .. }
            | Error::EmptyFile(_)
            | Error::Parse { .. }
            | Error::Config(_)
            | Error::Csv(_)
            | Error::Json(_) => true,
            _ => false,
        }
    }
}
