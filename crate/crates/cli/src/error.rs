use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] ivstream::Error),

    #[error("cannot serialize manifest: {0}")]
    Manifest(#[from] serde_json::Error),

    #[error("cannot build thread pool: {0}")]
    Threads(#[from] rayon::ThreadPoolBuildError),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
