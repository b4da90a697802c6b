use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid hyperparameters, layer shapes or geometry.
    #[error("configuration error: {0}")]
    Config(String),
    /// An operation was invoked in the wrong order (e.g. backward before forward).
    #[error("state error: {0}")]
    State(String),
    /// Malformed or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),
    /// NaN/Inf encountered, or a training run diverged.
    #[error("numerical error: {0}")]
    Numerical(String),
    /// Linear solve or optimality-criteria bisection failed.
    #[error("solver error: {0}")]
    Solver(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Attach a path to a raw I/O result.
pub(crate) trait IoContext<T> {
    fn at(self, path: &std::path::Path) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: &std::path::Path) -> Result<T> {
        self.map_err(|e| Error::io(path, e))
    }
}
