use sepp_core::SeppError;
use thiserror::Error;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_MODEL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed or inconsistent input file.
    #[error("{path}: {message}")]
    Input { path: String, message: String },

    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Model(#[from] SeppError),
}

impl CliError {
    pub fn input(path: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Input {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// 0 ok, 1 model error, 2 input error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input { .. } | CliError::Usage(_) | CliError::Io { .. } => EXIT_INPUT,
            CliError::Model(e) => match e {
                SeppError::OutsideDomain { .. } | SeppError::InvalidInput(_) | SeppError::InvalidTiling(_) => {
                    EXIT_INPUT
                }
                _ => EXIT_MODEL,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
