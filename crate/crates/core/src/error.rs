use thiserror::Error;

/// Errors shared across the simulation, tracking, and map construction code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("cell index {index} out of range for grid with {n_cells} cells")]
    CellOutOfRange { index: usize, n_cells: usize },

    #[error("transition row for cell {from} has empty support")]
    EmptyTransitionSupport { from: usize },

    #[error("sensing matrix is not semi-unitary: ||A A^H - I||_F = {deviation:.3e}")]
    NotSemiUnitary { deviation: f64 },

    #[error("matrix is not positive semidefinite: min eigenvalue {min_eigenvalue:.3e}")]
    NotPsd { min_eigenvalue: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("no reachable cell at step {step}")]
    ZeroSupport { step: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("covariance estimate requires at least one sample")]
    NoSamples,

    #[error("bound diagnostic precondition violated: {0}")]
    BoundPrecondition(String),

    #[error("map file error: {0}")]
    MapFormat(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
