use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("integration blow-up at step {step}: non-finite state")]
    Blowup { step: usize },

    #[error("covariance not positive semi-definite: {0}")]
    NotPsd(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("solver did not converge: {0}")]
    NoConvergence(String),

    #[error("degenerate series: {0}")]
    DegenerateSeries(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code per the CLI contract:
    /// 1 config error, 2 numerical failure, 3 i/o.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Unsupported(_) => 1,
            Error::Io { .. } | Error::Serde(_) => 3,
            _ => 2,
        }
    }
}
