use std::path::{Path, PathBuf};

use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("missing input: {what} not found at {}", path.display())]
    MissingInput { what: &'static str, path: PathBuf },

    #[error("no {0} path configured (set paths.{0})")]
    PathNotConfigured(&'static str),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("{0}")]
    InvalidInput(String),

    #[error("index holds {found} entries but n = {required} needs at least {required}; lower n_values or index more records")]
    InsufficientIndex { required: usize, found: usize },

    #[error(transparent)]
    Core(#[from] cbir_core::Error),

    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Machine-readable error record written to stderr.
#[derive(Debug, Serialize)]
pub struct ErrorRecord {
    pub code: &'static str,
    pub message: String,
}

impl CliError {
    pub(crate) fn missing_or_io(what: &'static str, path: &Path, e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingInput {
                what,
                path: path.to_path_buf(),
            }
        } else {
            CliError::Io {
                path: path.to_path_buf(),
                source: e,
            }
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::MissingInput { .. } | CliError::PathNotConfigured(_) => "missing_input",
            CliError::InvalidConfig(_) => "invalid_config",
            CliError::InvalidInput(_) => "invalid_input",
            CliError::InsufficientIndex { .. } => "insufficient_hits",
            CliError::Io { .. } => "io_error",
            CliError::Core(e) => core_code(e),
        }
    }

    pub fn record(&self) -> ErrorRecord {
        ErrorRecord {
            code: self.code(),
            message: self.to_string(),
        }
    }
}

fn core_code(e: &cbir_core::Error) -> &'static str {
    use cbir_core::Error as E;
    match e {
        E::Query { source, .. } => core_code(source),
        E::CorruptFile(_) => "corrupt_file",
        E::NormViolation { .. } | E::NotUnitNorm { .. } => "norm_violation",
        E::ZeroVector { .. } | E::NonFinite { .. } => "invalid_vector",
        E::DimensionMismatch { .. } => "dimension_mismatch",
        E::InsufficientHits { .. } => "insufficient_hits",
        E::InvalidConfig(_) | E::KTooLarge { .. } | E::InsufficientQueries { .. } => "invalid_config",
        E::InvalidManifest { .. }
        | E::MissingHash { .. }
        | E::MissingPatientId { .. }
        | E::DuplicateRecordId(_)
        | E::UnknownRecordId(_)
        | E::MultiLabel(_)
        | E::NoLabels(_)
        | E::ConflictingClassKind(_)
        | E::UnknownClass(_)
        | E::Csv(_) => "invalid_manifest",
        E::NonFiniteLoss { .. } => "training_diverged",
        E::Io(_) => "io_error",
        _ => "invalid_input",
    }
}
