use thiserror::Error;

/// Errors raised by the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum C3Error {
    #[error("response is constant (a = b = {0})")]
    ConstantResponse(f64),

    #[error("response has {distinct} distinct values, need at least {required} for the requested knots")]
    DegenerateResponse { distinct: usize, required: usize },

    #[error("column `{0}` has zero variance")]
    ZeroVariance(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is singular: eigenvalue {eigenvalue:e} below threshold {threshold:e}")]
    Singular { eigenvalue: f64, threshold: f64 },

    #[error("infeasible constraint: {0}")]
    Infeasible(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("data error: {0}")]
    Data(String),
}

pub type Result<T> = std::result::Result<T, C3Error>;
