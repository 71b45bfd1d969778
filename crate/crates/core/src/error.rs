use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("rank-deficient system: {0}")]
    RankDeficient(String),

    #[error("did not converge: {0}")]
    NonConvergence(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("cholesky factorisation failed after maximum jitter {jitter:e}; smallest eigenvalue {min_eigenvalue:e}")]
    Cholesky { jitter: f64, min_eigenvalue: f64 },

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("csv: {0}")]
    Csv(String),

    #[error("aborted after {failed} of {total} replications failed")]
    TooManyFailures { failed: usize, total: usize },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn in_fold(self, fold: usize) -> Self {
        Error::Fold {
            fold,
            source: Box::new(self),
        }
    }

    /// True for failures of the numerical routines rather than bad inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::RankDeficient(_)
            | Error::NonConvergence(_)
            | Error::Divergence(_)
            | Error::Cholesky { .. } => true,
            Error::Fold { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
