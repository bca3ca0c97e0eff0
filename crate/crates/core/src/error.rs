use thiserror::Error;

/// Sampled `(sigma, variance)` pairs attached to solver failures.
pub type Diagnostics = Vec<(f64, f64)>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("moment order {k} exceeds enumeration cap {cap}")]
    OrderAboveCap { k: usize, cap: usize },

    #[error("table order {table_k} does not match requested order {k}")]
    TableMismatch { k: usize, table_k: usize },

    #[error("no moment table available for order {0}")]
    MissingTable(usize),

    #[error("persymmetric completion failed at ({row}, {col}): {reason}")]
    Persymmetry { row: usize, col: usize, reason: String },

    #[error("coefficient overflow while aggregating order {0}")]
    Overflow(usize),

    #[error("matrix is not positive definite (pivot {index} = {pivot:e})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("triangular factor is singular at diagonal {0}")]
    Singular(usize),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("target variance {target} is unattainable: Var[y] < gamma^2 = {limit}")]
    Unattainable { target: f64, limit: f64 },

    #[error("no sigma in the search bracket reaches variance {target}")]
    NoSolution { target: f64, sweep: Diagnostics },

    #[error("variance is not monotone in sigma on the coarse grid")]
    NonMonotonic { sweep: Diagnostics },

    #[error(
        "series is outside its validity region sigma2 < {bound:e}; \
         use the Monte Carlo method or allow out-of-validity evaluation"
    )]
    SeriesOutOfValidity { bound: f64 },

    #[error("tolerance {tol} is below three Monte Carlo standard errors ({noise})")]
    ToleranceBelowNoise { tol: f64, noise: f64 },

    #[error("fixture error: {0}")]
    Fixture(String),
}

pub type Result<T> = std::result::Result<T, Error>;
