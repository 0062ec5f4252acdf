use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A module precondition was violated; `module` names the owner.
    #[error("{module}: {message}")]
    Invalid { module: &'static str, message: String },

    #[error("non-finite state for atom {atom} at t = {time:e} s")]
    NonFinite { atom: usize, time: f64 },

    #[error("sampler acceptance rate {rate:.3} outside [0.05, 0.95]; adjust proposal scales")]
    Acceptance { rate: f64 },

    #[error("collision grid overflow: atom {atom} outside the cell grid after enlargement")]
    GridOverflow { atom: usize },

    #[error("resonance not bracketed: {0}")]
    NotBracketed(String),

    #[error("insufficient data: {0}")]
    Insufficient(String),

    #[error("not saturated: {0}")]
    NotSaturated(String),

    #[error("{path}:{line}:{column}: {message}")]
    Config {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn invalid(module: &'static str, message: impl Into<String>) -> Self {
        Error::Invalid {
            module,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
