use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("bankruptcy at step {step}: gross portfolio return {gross} is not positive")]
    Bankruptcy { step: usize, gross: f64 },

    #[error("episode exhausted: step {step} >= episode length {len}")]
    EpisodeOver { step: usize, len: usize },

    #[error("value iteration did not converge within {0} sweeps")]
    NoConvergence(usize),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("rank-deficient regressors: {0}")]
    RankDeficient(String),

    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
