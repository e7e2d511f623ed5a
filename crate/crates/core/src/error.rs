use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Error taxonomy shared by the library and the CLI.
///
/// The CLI maps these onto process exit codes: configuration problems exit 2,
/// data problems exit 3, training divergence exits 4, anything else exits 5.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate geometry for {uprn}: {reason}")]
    DegenerateGeometry { uprn: String, reason: String },

    #[error("duplicate key {key} in {source_name}")]
    DuplicateKey { key: String, source_name: String },

    #[error("value out of range: {0}")]
    OutOfRange(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("degenerate target: {0}")]
    DegenerateTarget(String),

    #[error("record {uprn} has no usable modality: {reason}")]
    MissingModality { uprn: String, reason: String },

    #[error("shape mismatch in {op}: {detail}")]
    ShapeError { op: String, detail: String },

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("malformed input in {source_name} line {line}: {detail}")]
    ParseError {
        source_name: String,
        line: usize,
        detail: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code the CLI reports for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) => 2,
            Error::DegenerateGeometry { .. }
            | Error::DuplicateKey { .. }
            | Error::OutOfRange(_)
            | Error::EmptyInput(_)
            | Error::DegenerateTarget(_)
            | Error::MissingModality { .. }
            | Error::ShapeError { .. }
            | Error::ParseError { .. }
            | Error::Csv(_) => 3,
            Error::TrainingDiverged(_) => 4,
            Error::Checkpoint(_) | Error::Io(_) | Error::Json(_) => 5,
        }
    }

    /// Short machine-readable kind tag used in CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidConfig(_) => "invalid_config",
            Error::DegenerateGeometry { .. } => "degenerate_geometry",
            Error::DuplicateKey { .. } => "duplicate_key",
            Error::OutOfRange(_) => "out_of_range",
            Error::EmptyInput(_) => "empty_input",
            Error::DegenerateTarget(_) => "degenerate_target",
            Error::MissingModality { .. } => "missing_modality",
            Error::ShapeError { .. } => "shape_error",
            Error::TrainingDiverged(_) => "training_diverged",
            Error::ParseError { .. } => "parse_error",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}
