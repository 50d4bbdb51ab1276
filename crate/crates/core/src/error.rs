use std::path::PathBuf;

use crate::domain::ExampleId;
use crate::scoring::ScoreError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("record {record}: {message}")]
    Ingest { record: usize, message: String },

    #[error("record {record}: unknown label {value:?}")]
    UnknownLabel { record: usize, value: String },

    #[error("invalid template: {0}")]
    Template(String),

    #[error("unknown example id {0}")]
    Lookup(ExampleId),

    #[error("invalid permutation: {0}")]
    Permutation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("score-set schedule: {0}")]
    Schedule(String),

    #[error("infeasible label quota: {0}")]
    Infeasible(String),

    /// A value that an earlier stage should have produced is missing.
    #[error("internal consistency: {0}")]
    Consistency(String),

    #[error("feature vectors have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),

    #[error("missing prerequisite artifact {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("run directory {} is locked by another run", .0.display())]
    Locked(PathBuf),

    #[error(transparent)]
    Score(#[from] ScoreError),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// Short machine-readable tag used in error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyDataset(_) => "empty_dataset",
            Error::Ingest { .. } => "ingest",
            Error::UnknownLabel { .. } => "unknown_label",
            Error::Template(_) => "template",
            Error::Lookup(_) => "lookup",
            Error::Permutation(_) => "permutation",
            Error::Config(_) => "config",
            Error::Schedule(_) => "schedule",
            Error::Infeasible(_) => "infeasible",
            Error::Consistency(_) => "consistency",
            Error::LengthMismatch(..) => "length_mismatch",
            Error::MissingArtifact(_) => "missing_artifact",
            Error::Locked(_) => "locked",
            Error::Score(e) => e.kind(),
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
        }
    }
}
