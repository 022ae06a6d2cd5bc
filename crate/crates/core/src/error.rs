use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // vector math
    #[error("vector norm is zero (below 1e-12)")]
    ZeroVector,
    #[error("vector contains a non-finite component")]
    NonFinite,
    #[error("empty list")]
    EmptyList,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("weight {0} is outside [0, 1]")]
    WeightOutOfRange(f64),
    #[error("confidence {0} is outside [0, 1]")]
    ConfidenceOutOfRange(f64),
    #[error("class {class} has no {modality} embeddings")]
    MissingModality { class: usize, modality: &'static str },
    #[error("record {0} is not a query")]
    NotAQuery(String),
    #[error("prototypes must cover classes 0..{expected} in order, found class {found} at position {position}")]
    ProtoOrder {
        expected: usize,
        found: usize,
        position: usize,
    },

    // store
    #[error("bad magic bytes (not an EMBS file)")]
    BadMagic,
    #[error("unsupported store version {0}")]
    VersionUnsupported(u32),
    #[error("store file is truncated")]
    TruncatedFile,
    #[error("corrupt store: {0}")]
    Corrupt(String),
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("class index {index} out of range for {classes} classes")]
    ClassIndexOutOfRange { index: i64, classes: usize },
    #[error("invalid manifest: {0}")]
    ManifestInvalid(String),

    // metrics / scan
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("pair subset has no queries for class {0}")]
    EmptySubset(usize),
    #[error("pair evaluation needs two distinct classes, got {0} twice")]
    SameClass(usize),

    // prompts
    #[error("unknown placeholder <{0}>")]
    UnknownPlaceholder(String),
    #[error("axis {0} has no values")]
    EmptyAxis(String),
    #[error("unknown axis {0:?}")]
    UnknownAxis(String),
    #[error("no template registered for dataset {0:?}")]
    UnknownDataset(String),
    #[error("no template registered for classifying {classify} with {enrich} enrichment")]
    UnknownTemplate { classify: String, enrich: String },
    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: PathBuf, reason: String },
    #[error("class {0:?} has an empty prompt list")]
    EmptyClassEntry(String),

    // bridge
    #[error("bridge unavailable: {0}")]
    BridgeUnavailable(String),
    #[error("bridge protocol error: {0}")]
    ProtocolError(String),
    #[error("bridge reported an error: {0}")]
    RemoteError(String),

    // harness
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("invalid fixture spec: {0}")]
    SpecInvalid(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 bridge.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ConfigInvalid(_)
            | Error::SpecInvalid(_)
            | Error::UnknownDataset(_)
            | Error::UnknownTemplate { .. }
            | Error::UnknownAxis(_)
            | Error::UnknownPlaceholder(_)
            | Error::WeightOutOfRange(_) => 2,
            Error::BridgeUnavailable(_) | Error::ProtocolError(_) | Error::RemoteError(_) => 4,
            _ => 3,
        }
    }
}
