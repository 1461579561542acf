use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the command-line driver to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Numerical,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {context} (expected {expected}, got {actual})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("scene generation failed after {attempts} attempts: {reason}")]
    Generation { attempts: usize, reason: String },

    #[error("target {0} is not reachable")]
    Unreachable(u32),

    #[error("no entities in the current frame or in memory")]
    EmptyState,

    #[error("attention over an empty entity set")]
    EmptyEntities,

    #[error("empty candidate set")]
    EmptyCandidates,

    #[error("instruction outside grammar at token {position}: {reason}")]
    Parse { position: usize, reason: String },

    #[error("backward called with a cache from different parameters")]
    StaleCache,

    #[error("probability vector not normalized (sum = {sum})")]
    NotNormalized { sum: f64 },

    #[error("zero-norm vector under cosine similarity")]
    ZeroNorm,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("no entities tracked at step {0}")]
    NoEntitiesAtStep(usize),

    #[error("need at least {needed} entities per contrastive batch, only {available} available")]
    InsufficientEntities { needed: usize, available: usize },

    #[error("empty validation set")]
    EmptyValidation,

    #[error("both classes must be present")]
    SingleClass,

    #[error("true entity {0} absent from candidate set")]
    TrueEntityAbsent(u32),

    #[error("actions must be quantized before plug-in estimation")]
    Unquantized,

    #[error("loss became NaN at step {step}: {diagnostic}")]
    NanLoss { step: usize, diagnostic: String },

    #[error("bottleneck violation at {path}")]
    BottleneckViolation { path: String },

    #[error("{path}:{line}: {reason}")]
    Schema {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("schema version mismatch in {path}: expected {expected}, found {found}")]
    SchemaVersion {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("dataset digest mismatch: checkpoint was trained on {expected}, dataset is {found}")]
    DigestMismatch { expected: String, found: String },

    #[error("split hygiene violated: {0}")]
    SplitMix(String),

    #[error("config: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::NanLoss { .. } | Error::NonFinite(_) => ErrorClass::Numerical,
            _ => ErrorClass::Validation,
        }
    }

    /// Short stable identifier, used in machine-readable error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::Generation { .. } => "generation",
            Error::Unreachable(_) => "unreachable",
            Error::EmptyState => "empty_state",
            Error::EmptyEntities => "empty_entities",
            Error::EmptyCandidates => "empty_candidates",
            Error::Parse { .. } => "parse",
            Error::StaleCache => "stale_cache",
            Error::NotNormalized { .. } => "not_normalized",
            Error::ZeroNorm => "zero_norm",
            Error::NonFinite(_) => "non_finite",
            Error::NoEntitiesAtStep(_) => "no_entities_at_step",
            Error::InsufficientEntities { .. } => "insufficient_entities",
            Error::EmptyValidation => "empty_validation",
            Error::SingleClass => "single_class",
            Error::TrueEntityAbsent(_) => "true_entity_absent",
            Error::Unquantized => "unquantized",
            Error::NanLoss { .. } => "nan_loss",
            Error::BottleneckViolation { .. } => "bottleneck_violation",
            Error::Schema { .. } => "schema",
            Error::SchemaVersion { .. } => "schema_version",
            Error::DigestMismatch { .. } => "digest_mismatch",
            Error::SplitMix(_) => "split_mix",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
