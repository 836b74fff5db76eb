use std::path::{Path, PathBuf};

use phlink::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Core(#[from] Error),

    #[error("configuration: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    /// Process exit status: 1 I/O, 2 validation, 3 sync failure,
    /// 4 identifiability, 5 non-convergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Config(_) => 2,
            CliError::Core(e) => match e {
                Error::Io(_) | Error::Csv(_) => 1,
                Error::SyncFailure(_) => 3,
                Error::Identifiability(_) => 4,
                Error::NonConvergence(_) => 5,
                Error::InvalidArgument(_) | Error::Domain(_) | Error::WindowOverrun { .. } | Error::Parse(_) => 2,
            },
        }
    }
}
