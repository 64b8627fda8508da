use std::path::PathBuf;

use thiserror::Error;

/// Exit status for a run that finished and passed every check.
pub const EXIT_OK: i32 = 0;
/// A verification check failed or a computation did not converge.
pub const EXIT_CHECK_FAILURE: i32 = 1;
/// Bad configuration, data, or arguments.
pub const EXIT_INPUT_ERROR: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("input error: {0}")]
    Input(String),

    #[error("computation failed: {0}")]
    Compute(dckernel::Error),

    #[error("check failed: {0}")]
    Check(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Io { .. } => EXIT_INPUT_ERROR,
            CliError::Compute(_) | CliError::Check(_) => EXIT_CHECK_FAILURE,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<dckernel::Error> for CliError {
    fn from(e: dckernel::Error) -> Self {
        use dckernel::Error as E;
        match e {
            E::InvalidHyperparameter(_) | E::Domain { .. } | E::InvalidGrid(_) | E::InvalidInput(_) => {
                CliError::Input(e.to_string())
            }
            E::Quadrature { .. } | E::Divergence { .. } | E::Conditioning { .. } | E::Factorization(_) => {
                CliError::Compute(e)
            }
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
