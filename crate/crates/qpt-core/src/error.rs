use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is not Hermitian (||H - H^dag||_F = {deviation:e})")]
    NotHermitian { deviation: f64 },

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("eigendecomposition of a {dim}x{dim} matrix did not converge")]
    EigenNoConvergence { dim: usize },

    #[error("QR decomposition failed")]
    QrFailure,

    #[error("Choi matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotCompletelyPositive { min_eigenvalue: f64 },

    #[error("outcome probability {probability:e} is outside [0, 1]")]
    NotAState { probability: f64 },

    #[error("infeasible: minimal residual {min_residual:e} exceeds eta = {eta:e}")]
    Infeasible { min_residual: f64, eta: f64 },

    #[error("map is not trace-annihilating (||Tr o M|| = {deviation:e})")]
    NotTraceAnnihilating { deviation: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
