use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("line {line} of {path}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid record {id}: {reason}")]
    InvalidRecord { id: String, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown narrative ids: {0:?}")]
    UnknownIds(Vec<String>),

    #[error("id sets differ: {0}")]
    IdMismatch(String),

    #[error("missing value for placeholder `{0}`")]
    MissingPlaceholder(String),

    #[error("template is for {template} but the prompt is for {requested}")]
    WrongEventType { template: String, requested: String },

    #[error("template error: {0}")]
    Template(String),

    #[error("endpoint rejected credentials (status {status})")]
    Authentication { status: u16 },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("reviewer {reviewer} is not assigned to narrative {narrative_id}")]
    UnassignedReviewer {
        reviewer: String,
        narrative_id: String,
    },

    #[error("forbidden: {0}")]
    Forbidden(String),

    #[error("unknown narrative {0}")]
    UnknownNarrative(String),

    #[error("narrative {0} is finalized")]
    Finalized(String),

    #[error("missing decision for narrative {narrative_id} from {reviewer}")]
    MissingDecision {
        narrative_id: String,
        reviewer: String,
    },

    #[error("tied narrative {0} has no tie-break decision")]
    MissingTieBreak(String),

    #[error("training set contains only `{0}` labels")]
    DegenerateTraining(crate::Label),

    #[error("vector dimension {found} does not match model dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("stratified {k}-fold split needs at least {k} samples per class, smallest class has {smallest}")]
    StratificationInfeasible { k: usize, smallest: usize },

    #[error("worker protocol error at `{line}`: {message}")]
    Protocol { line: String, message: String },

    #[error("worker timed out after {0:?}")]
    WorkerTimeout(std::time::Duration),

    #[error("worker exited: {0}")]
    WorkerExit(String),

    #[error("prediction sets do not cover the same ids: {0}")]
    CoverageMismatch(String),

    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),

    #[error("http error: {0}")]
    Http(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable tag for the CLI's error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
            Error::Parse { .. } => "parse",
            Error::InvalidRecord { .. } => "invalid_record",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::UnknownIds(_) => "unknown_ids",
            Error::IdMismatch(_) => "id_mismatch",
            Error::MissingPlaceholder(_) => "missing_placeholder",
            Error::WrongEventType { .. } => "wrong_event_type",
            Error::Template(_) => "template",
            Error::Authentication { .. } => "authentication",
            Error::Validation(_) => "validation",
            Error::UnassignedReviewer { .. } => "unassigned_reviewer",
            Error::Forbidden(_) => "forbidden",
            Error::UnknownNarrative(_) => "unknown_narrative",
            Error::Finalized(_) => "finalized",
            Error::MissingDecision { .. } => "missing_decision",
            Error::MissingTieBreak(_) => "missing_tie_break",
            Error::DegenerateTraining(_) => "degenerate_training",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::StratificationInfeasible { .. } => "stratification_infeasible",
            Error::Protocol { .. } => "protocol",
            Error::WorkerTimeout(_) => "worker_timeout",
            Error::WorkerExit(_) => "worker_exit",
            Error::CoverageMismatch(_) => "coverage_mismatch",
            Error::MissingArtifact(_) => "missing_artifact",
            Error::Http(_) => "http",
        }
    }
}
