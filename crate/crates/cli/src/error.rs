use std::path::Path;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Exit status for a successful run.
pub const EXIT_OK: u8 = 0;
/// Exit status for I/O and other environment failures.
pub const EXIT_FAILURE: u8 = 1;
/// Exit status for invalid configuration or arguments.
pub const EXIT_CONFIG: u8 = 2;
/// Exit status for numeric failures (non-finite losses or states).
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] tcblran::Error),

    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    /// A run finished with some failed stages; `code` is the first one's.
    #[error("{message}")]
    Partial { code: u8, message: String },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn json(path: &Path, source: serde_json::Error) -> Self {
        CliError::Json {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) => core_exit_code(e),
            CliError::Usage(_) => EXIT_CONFIG,
            CliError::Partial { code, .. } => *code,
            CliError::Io { .. } | CliError::Json { .. } | CliError::Csv(_) => EXIT_FAILURE,
        }
    }
}

pub fn core_exit_code(e: &tcblran::Error) -> u8 {
    use tcblran::Error as E;
    if e.is_numeric() {
        return EXIT_NUMERIC;
    }
    match e {
        E::Config(_) | E::InvalidArgument(_) | E::Schema { .. } | E::ShapeMismatch { .. } => EXIT_CONFIG,
        _ => EXIT_FAILURE,
    }
}
