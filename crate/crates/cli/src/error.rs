use std::path::Path;

/// Failures grouped by process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration, failed certificate, malformed input: exit 2.
    #[error("{0}")]
    Validation(String),
    /// The state left the admissible set during a run: exit 3.
    #[error("{0}")]
    Runtime(String),
    /// Exit 4.
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Runtime(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }
}

impl From<hydrolim::Error> for CliError {
    fn from(e: hydrolim::Error) -> Self {
        if e.is_collision() {
            CliError::Runtime(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}
