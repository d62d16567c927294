use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature for {what} did not converge (residual estimate {residual:.3e})")]
    Quadrature { what: String, residual: f64 },

    #[error("integration failed at t = {t}: {reason}")]
    Integration { t: f64, reason: String },

    #[error("depolarized state: mean spin {0} is not positive")]
    Depolarized(f64),

    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error("dense solver budget exceeded: dimension {dim} > {max}")]
    Budget { dim: usize, max: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) | Error::Domain(_) | Error::Budget { .. } => 2,
            Error::Quadrature { .. } | Error::Integration { .. } | Error::Depolarized(_) => 3,
            Error::Io { .. } => 4,
        }
    }
}
