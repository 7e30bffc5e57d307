use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix market line {line}: {msg}")]
    MatrixMarket { line: usize, msg: String },

    #[error("initial residual is zero (converged at start)")]
    ZeroResidual,

    #[error("least-squares factor is singular at column {column}")]
    SingularFactor { column: usize },

    #[error("matrix is all zero")]
    ZeroMatrix,

    #[error("matrix is not upper Hessenberg: entry ({row}, {col}) is nonzero")]
    NotHessenberg { row: usize, col: usize },

    #[error("singular Hessenberg block (FOM breakdown)")]
    FomBreakdown,

    #[error("eigenvalue computation did not converge")]
    NoConvergence,

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
