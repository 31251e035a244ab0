use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] grinlab::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for configuration problems, 3 for everything else.
    pub fn exit_code(&self) -> i32 {
        fn core_is_config(e: &grinlab::Error) -> bool {
            match e {
                grinlab::Error::Config(_) => true,
                grinlab::Error::Stage { source, .. } => core_is_config(source),
                _ => false,
            }
        }
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) if core_is_config(e) => 2,
            _ => 3,
        }
    }
}
