use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config keys or values. Exit code 1.
    #[error("usage: {0}")]
    Usage(String),
    /// Anything wrong with the data being processed. Exit code 2.
    #[error(transparent)]
    Data(#[from] voxsg::Error),
    #[error("{0}")]
    Io(String),
    #[error("server: {0}")]
    Server(String),
}

impl CliError {
    pub fn io(what: impl std::fmt::Display, e: std::io::Error) -> Self {
        CliError::Io(format!("{what}: {e}"))
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            _ => 2,
        }
    }
}
