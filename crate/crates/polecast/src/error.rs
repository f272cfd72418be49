use thiserror::Error;

/// Command failure, classified by the exit code it maps to.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments or malformed input.
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    /// Singular systems, non-passive poles, divergent training.
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn io(path: &std::path::Path, err: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }
}

impl From<polecast_core::Error> for CliError {
    fn from(e: polecast_core::Error) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Usage(e.to_string())
        }
    }
}

impl From<neuralcast::Error> for CliError {
    fn from(e: neuralcast::Error) -> Self {
        use neuralcast::Error as E;
        match e {
            E::Core(inner) => inner.into(),
            E::Io(_) => CliError::Io(e.to_string()),
            E::DivergenceDetected { .. } | E::GradMismatch { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() { CliError::Io(e.to_string()) } else { CliError::Usage(e.to_string()) }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
