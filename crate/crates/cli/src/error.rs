use std::path::PathBuf;

use fieldrecon_core::Error as CoreError;

/// Failures mapped onto the stable exit-code contract.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing {what}: {}", path.display())]
    Missing { what: &'static str, path: PathBuf },
    #[error("incompatible inputs: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Core(CoreError::Config(_)) => 2,
            CliError::Missing { .. } => 3,
            CliError::Incompatible(_) => 4,
            CliError::Core(_) => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Fails with exit code 3 unless `path` exists.
pub fn require(path: PathBuf, what: &'static str) -> CliResult<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(CliError::Missing { what, path })
    }
}
