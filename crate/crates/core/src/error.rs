use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Gram or covariance matrix stayed indefinite after the largest jitter.
    #[error(
        "cholesky factorization failed for {dim}x{dim} matrix \
         (mean diagonal {mean_diag:.3e}, last jitter {jitter:.3e})"
    )]
    Factorization {
        dim: usize,
        mean_diag: f64,
        jitter: f64,
    },

    #[error("sampling failed: {0}")]
    Sampling(String),

    #[error("QP infeasible at stage {stage} (certificate residual {residual:.3e})")]
    QpInfeasible { stage: usize, residual: f64 },

    #[error("sample {sample}, stage {stage}: {source}")]
    AtStage {
        sample: usize,
        stage: usize,
        #[source]
        source: Box<Error>,
    },

    /// A closed-loop run stopped early; the partial results were kept.
    #[error("run aborted at step {step}: {message}")]
    Aborted { step: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn at(self, sample: usize, stage: usize) -> Self {
        Error::AtStage {
            sample,
            stage,
            source: Box::new(self),
        }
    }

    /// True for errors caused by the user's input rather than by numerics.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::InvalidArgument(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
