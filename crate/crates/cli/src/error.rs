use thiserror::Error;

/// Failure of one command, carrying its process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Exit 2: the configuration does not parse, validate or resolve.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// Exit 3.
    #[error("failed to load model: {0}")]
    ModelLoad(String),
    /// Exit 4: a pipeline stage failed after validation.
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: String, message: String },
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::ModelLoad(_) => 3,
            CliError::Stage { .. } => 4,
        }
    }

    pub fn config(message: impl std::fmt::Display) -> Self {
        CliError::Config(message.to_string())
    }

    /// Adapter for `map_err` that tags a core error with its stage.
    pub fn stage<E: std::fmt::Display>(stage: impl Into<String>) -> impl FnOnce(E) -> Self {
        let stage = stage.into();
        move |e| CliError::Stage { stage, message: e.to_string() }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
