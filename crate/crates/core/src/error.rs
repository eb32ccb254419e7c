use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    /// A design column is numerically collinear with the columns pivoted before it.
    #[error("rank-deficient design: column `{column}` is collinear with the other regressors{hint}")]
    RankDeficient { column: String, hint: String },

    #[error("constant input: {0}")]
    ConstantInput(String),

    #[error("identification failure: {message} (schur margin {margin:.3e})")]
    Identification { message: String, margin: f64 },

    #[error("quadrature did not converge after {subdivisions} subdivisions (error estimate {error:.3e})")]
    Quadrature { subdivisions: usize, error: f64 },

    #[error("non-finite integrand value at {at}")]
    NonFiniteIntegrand { at: f64 },

    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("bootstrap: {failed} of {requested} resamples were degenerate (limit 1%)")]
    ExcessiveDegeneracy { failed: usize, requested: usize },

    #[error("data: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by user configuration or input files, as
    /// opposed to numerical failures during estimation.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_) | Error::Data(_) | Error::Io(_) | Error::Csv(_) | Error::Json(_)
        )
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        if self.is_config() {
            2
        } else {
            3
        }
    }
}
