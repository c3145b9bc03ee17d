use stepframe::backends::BackendError;
use stepframe::filter::FilterError;
use stepframe::generation::GenerationError;
use stepframe::grounding::GroundingError;
use stepframe::ingest::IngestError;
use stepframe::manifest::ManifestError;
use stepframe::metrics::MetricsError;
use thiserror::Error;

/// Error classes, each with its own exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("alignment mismatch: {0}")]
    AlignmentMismatch(String),
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingInput(_) | CliError::AlignmentMismatch(_) => 3,
            CliError::Backend(_) => 4,
            CliError::Internal(_) => 5,
        }
    }

    pub fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Internal(format!("{}: {e}", path.display()))
    }

    /// Same class, message prefixed.
    pub fn context(self, prefix: &str) -> Self {
        match self {
            CliError::Config(m) => CliError::Config(format!("{prefix}: {m}")),
            CliError::MissingInput(m) => CliError::MissingInput(format!("{prefix}: {m}")),
            CliError::AlignmentMismatch(m) => CliError::AlignmentMismatch(format!("{prefix}: {m}")),
            CliError::Backend(m) => CliError::Backend(format!("{prefix}: {m}")),
            CliError::Internal(m) => CliError::Internal(format!("{prefix}: {m}")),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::InvalidDescriptor(m) => CliError::Config(m),
            BackendError::Fixture(m) => CliError::Config(format!("fixture: {m}")),
            other => CliError::Backend(other.to_string()),
        }
    }
}

impl From<ManifestError> for CliError {
    fn from(e: ManifestError) -> Self {
        CliError::MissingInput(e.to_string())
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::InvalidRatio(_) => CliError::Config(e.to_string()),
            _ => CliError::MissingInput(e.to_string()),
        }
    }
}

impl From<FilterError> for CliError {
    fn from(e: FilterError) -> Self {
        match e {
            FilterError::Backend(b) => b.into(),
            FilterError::Manifest(m) => m.into(),
            FilterError::InvalidThreshold(_) => CliError::Config(e.to_string()),
            FilterError::AlignmentMismatch => CliError::AlignmentMismatch(e.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<GroundingError> for CliError {
    fn from(e: GroundingError) -> Self {
        match e {
            GroundingError::Backend(b) => b.into(),
            GroundingError::Manifest(m) => m.into(),
            GroundingError::MalformedBackendReply(_) => CliError::Backend(e.to_string()),
            GroundingError::Plan(_) => CliError::MissingInput(e.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<GenerationError> for CliError {
    fn from(e: GenerationError) -> Self {
        match e {
            GenerationError::Backend(b) => b.into(),
            GenerationError::MissingPlan(_) | GenerationError::MissingFrames(_) => {
                CliError::MissingInput(e.to_string())
            }
            GenerationError::InvalidEpochs => CliError::Config(e.to_string()),
            GenerationError::Metrics(m) => m.into(),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Backend(b) => b.into(),
            MetricsError::EmptyInput | MetricsError::TooFewSamples(_) => {
                CliError::MissingInput(e.to_string())
            }
            MetricsError::DimensionMismatch { .. } => CliError::AlignmentMismatch(e.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}
