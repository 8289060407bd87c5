use thiserror::Error;

use crate::probe::EpochLoss;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("zero-norm vector{}", fmt_record(.record_id))]
    ZeroVector { record_id: Option<u64> },

    #[error("non-finite component in vector{}", fmt_record(.record_id))]
    NonFinite { record_id: Option<u64> },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("record {record_id} belongs to a deduplicated dataset but has no content hash")]
    MissingHash { record_id: u64 },

    #[error("record {record_id} has no patient id")]
    MissingPatientId { record_id: u64 },

    #[error("record id {0} is not present in the manifest")]
    UnknownRecordId(u64),

    #[error("record id {0} appears more than once")]
    DuplicateRecordId(u64),

    #[error("record {0} carries more than one label and cannot be indexed as single-label")]
    MultiLabel(u64),

    #[error("record {0} has no labels")]
    NoLabels(u64),

    #[error("class {0:?} is declared with conflicting class kinds")]
    ConflictingClassKind(String),

    #[error("unknown class {0:?}")]
    UnknownClass(String),

    #[error("invalid manifest (line {line}): {message}")]
    InvalidManifest { line: u64, message: String },

    #[error("corrupt file: {0}")]
    CorruptFile(String),

    #[error("stored vector at row {row} has norm {norm}, outside unit tolerance")]
    NormViolation { row: usize, norm: f64 },

    #[error("query vector has norm {norm}, expected unit norm")]
    NotUnitNorm { norm: f64 },

    #[error("index is empty")]
    EmptyIndex,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("query {record_id}: {source}")]
    Query {
        record_id: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("result has {found} hits but evaluating P@{required} needs at least {required} (index too small)")]
    InsufficientHits { required: usize, found: usize },

    #[error("no queries to evaluate")]
    EmptyQuerySet,

    #[error("validation set is empty")]
    EmptyValidationSet,

    #[error("k = {k} exceeds the index size {count}")]
    KTooLarge { k: usize, count: usize },

    #[error("training data contains fewer than two classes")]
    SingleClass,

    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize, history: Vec<EpochLoss> },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("no class has a positive sample")]
    NoPositives,

    #[error("class {class} has {available} query candidates, {required} required")]
    InsufficientQueries {
        class: String,
        required: usize,
        available: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn fmt_record(record_id: &Option<u64>) -> String {
    match record_id {
        Some(id) => format!(" (record {id})"),
        None => String::new(),
    }
}

impl Error {
    /// Attaches a record id to vector-level errors that were raised without one.
    pub(crate) fn with_record(self, id: u64) -> Self {
        match self {
            Error::ZeroVector { record_id: None } => Error::ZeroVector { record_id: Some(id) },
            Error::NonFinite { record_id: None } => Error::NonFinite { record_id: Some(id) },
            other => other,
        }
    }
}
