use thiserror::Error;

/// Crate-wide error type. Numerical routines return `Result` whenever a
/// precondition is checkable at runtime; silent NaN propagation is treated
/// as a bug.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("negative time t = {t} not allowed for the {which} semigroup")]
    NegativeTime { t: f64, which: &'static str },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("horizon exceeded: {0}")]
    Horizon(String),

    #[error("circulant embedding failed: most negative eigenvalue {min_eig:.6e}")]
    CirculantEmbedding { min_eig: f64 },

    #[error("covariance factorization failed: nonpositive pivot {pivot:.6e}")]
    NotPositiveDefinite { pivot: f64 },

    #[error("Young condition violated: beta + beta' = {sum} <= 1")]
    YoungCondition { sum: f64 },

    #[error("endpoint mismatch between blocks {block} and {next}: |delta| = {delta:.6e}")]
    EndpointMismatch {
        block: usize,
        next: usize,
        delta: f64,
    },

    #[error("spectral gap condition fails: value {value:.6} > 0.5")]
    GapCondition { value: f64 },

    #[error("iteration is not contracting: measured factor {factor:.4} at step {iteration}")]
    NoContraction { factor: f64, iteration: usize },

    #[error(
        "maximum iterations ({max_iter}) exceeded: last update {last_update:.6e}, measured factor {factor:.4}"
    )]
    MaxIter {
        max_iter: usize,
        last_update: f64,
        factor: f64,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
