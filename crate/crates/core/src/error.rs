use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("column `{0}` not found in CSV header")]
    MissingColumn(String),
    #[error("non-numeric or non-finite cell at data row {row}, column `{col}`")]
    NonNumericCell { row: usize, col: String },
    #[error("dataset contains no rows")]
    EmptyDataset,
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("covariance matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("split kind `{0}` requires a time index")]
    MissingTimeIndex(&'static str),
    #[error("basis term {term} has zero empirical variance on the training set")]
    DegenerateTerm { term: String },
    #[error("underdetermined fit: n = {n} must exceed k = {k}")]
    Underdetermined { n: usize, k: usize },
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("every bootstrap replicate required the pseudo-inverse fallback")]
    AllReplicatesSingular,
    #[error("variance objective is not positive ({0})")]
    NonpositiveVariance(f64),
    #[error("too many candidate interferents ({0}; at most 15 are enumerated)")]
    TooManyInterferents(usize),
    #[error("model output has zero variance under the input distribution")]
    ZeroOutputVariance,
    #[error("PME enumeration supports at most 9 inputs, got {0}")]
    TooManyInputs(usize),
    #[error("predictive covariance is singular")]
    SingularCovariance,
    #[error("prior training points are degenerate (zero spread in `{0}`)")]
    DegeneratePrior(String),
    #[error("nothing to report: {0}")]
    EmptyInput(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by arithmetic breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite
                | Error::NumericalFailure(_)
                | Error::AllReplicatesSingular
                | Error::NonpositiveVariance(_)
                | Error::ZeroOutputVariance
                | Error::SingularCovariance
                | Error::Underdetermined { .. }
        )
    }
}
