use std::path::PathBuf;

use thiserror::Error;

/// Failures that map onto the documented process exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),

    #[error("corpus not found: {}", .0.display())]
    CorpusNotFound(PathBuf),

    #[error("input error: {0}")]
    Input(String),

    #[error("model mismatch: {0}")]
    Mismatch(String),

    #[error("inconclusive detection: no potential watermarked token")]
    Inconclusive,

    #[error("cannot write {}: {source}", path.display())]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(adawm::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::CorpusNotFound(_) | CliError::Input(_) => 3,
            CliError::Mismatch(_) => 4,
            CliError::Inconclusive => 5,
            CliError::Output { .. } => 6,
            CliError::Core(_) => 1,
        }
    }

    pub(crate) fn output(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Output {
            path: path.into(),
            source,
        }
    }
}

impl From<adawm::Error> for CliError {
    fn from(e: adawm::Error) -> Self {
        use adawm::Error as E;
        match e {
            E::VocabMismatch { .. } | E::DimensionMismatch(_) => CliError::Mismatch(e.to_string()),
            E::InvalidInput(_) | E::EmptyCorpus | E::TokenOutOfRange { .. } | E::Format { .. } | E::Io { .. } => {
                CliError::Input(e.to_string())
            }
            E::Diverged { .. } => CliError::Core(e),
        }
    }
}
