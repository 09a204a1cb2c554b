use std::path::PathBuf;

/// Errors raised anywhere in the harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("duplicate utterance id `{0}`")]
    DuplicateId(String),
    #[error("utterance `{utterance}` refers to unknown speaker `{speaker}`")]
    UnknownSpeaker { utterance: String, speaker: String },
    #[error("utterance `{0}` has no tokens after normalization")]
    EmptyUtterance(String),
    #[error("speaker `{speaker}` has conflicting severities `{first}` and `{second}`")]
    InconsistentSeverity {
        speaker: String,
        first: String,
        second: String,
    },
    #[error("leave-one-speaker-out needs at least 2 non-control speakers, found {0}")]
    InsufficientSpeakers(usize),
    #[error("manifest {path}: line {line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("target text list is empty")]
    EmptyTarget,
    #[error("candidate pool is empty")]
    EmptyPool,
    #[error("invalid coverage parameters: {0}")]
    InvalidCoverage(String),

    #[error("language model training set is empty")]
    EmptyCorpus,
    #[error("invalid language model: {0}")]
    InvalidModel(String),

    #[error("no rate table entry for severity `{0}`")]
    MissingSeverityRates(String),
    #[error("invalid channel rates: {0}")]
    InvalidRates(String),
    #[error("vocabulary is empty")]
    EmptyVocabulary,
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
    #[error("backend protocol error: {0}")]
    Protocol(String),
    #[error("backend did not answer within {0} ms")]
    BackendTimeout(u64),
    #[error("backend reported an error: {0}")]
    Backend(String),

    #[error("lattice has no steps")]
    EmptyLattice,
    #[error("invalid decoder configuration: {0}")]
    InvalidFusionConfig(String),

    #[error("group `{0}` has no members")]
    EmptyGroup(String),
    #[error("paired samples do not line up: {0}")]
    Pairing(String),

    #[error("invalid pipeline configuration: {0}")]
    InvalidConfig(String),
    #[error("speaker `{speaker}` aborted at stage {stage}: {source}")]
    StageAborted {
        speaker: String,
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("row `{0}` has no AVG cell")]
    IncompleteRow(String),
    #[error("invalid table: {0}")]
    InvalidTable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Backend,
    Internal,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Protocol(_) | Error::BackendTimeout(_) | Error::Backend(_) => ErrorKind::Backend,
            Error::StageAborted { source, .. } => source.kind(),
            Error::InvalidLattice(_) => ErrorKind::Internal,
            _ => ErrorKind::Validation,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
