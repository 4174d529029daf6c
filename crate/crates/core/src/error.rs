use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    /// The excluded hyperplane `H_i + H_j = 1` or another unsupported region.
    #[error("unsupported parameters: {0}")]
    Unsupported(String),

    #[error("quadrature error bound {bound:e} exceeds tolerance {tolerance:e}")]
    Accuracy { bound: f64, tolerance: f64 },

    #[error("covariance is not positive semidefinite (min eigenvalue {min_eigenvalue:e}, tolerance {tolerance:e})")]
    NotPsd { min_eigenvalue: f64, tolerance: f64 },

    #[error("data error: {0}")]
    Data(String),

    #[error("initializer failed: {0}")]
    Init(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("replication {replication} (seed {seed}) failed: {source}")]
    Replication {
        replication: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Stable short name used in machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::InvalidParams(_) => "invalid_params",
            Error::Unsupported(_) => "unsupported",
            Error::Accuracy { .. } => "accuracy",
            Error::NotPsd { .. } => "not_psd",
            Error::Data(_) => "data",
            Error::Init(_) => "init",
            Error::Config(_) => "config",
            Error::Replication { .. } => "replication",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
        }
    }
}
