use aim_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("bad magic")]
    BadMagic,

    #[error("truncated payload: need {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("header/payload length mismatch: {0}")]
    LengthMismatch(String),

    #[error("non-finite value in `{0}`")]
    NonFinite(String),

    #[error("malformed header: {0}")]
    Header(String),

    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed CSV: {0}")]
    Csv(String),

    #[error(transparent)]
    Core(#[from] CoreError),
}

/// Process exit status of the `aim` binary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    /// Bad usage, unreadable or malformed input.
    Input = 2,
    /// Inputs are well-formed but inconsistent with each other.
    Validation = 3,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    /// Well-formed inputs that disagree with each other or with a manifest.
    #[error("{0}")]
    Validation(String),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::Input,
            CliError::Validation(_) => ExitCode::Validation,
            CliError::Format(FormatError::Core(e)) | CliError::Core(e) => core_exit_code(e),
            CliError::Format(_) => ExitCode::Input,
        }
    }
}

fn core_exit_code(e: &CoreError) -> ExitCode {
    match e {
        CoreError::OutOfRange { .. }
        | CoreError::UnknownMethod(_)
        | CoreError::InvalidConfig(_)
        | CoreError::InvalidScores(_)
        | CoreError::EmptyCalibration
        | CoreError::InvalidCalibration(_)
        | CoreError::NonFinite(_)
        | CoreError::InvalidShape { .. }
        | CoreError::InvalidSpec(_) => ExitCode::Input,
        _ => ExitCode::Validation,
    }
}
