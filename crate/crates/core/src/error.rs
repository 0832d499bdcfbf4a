use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("evaluation point {index} has zero total kernel weight")]
    DegenerateGrid { index: usize },

    #[error("input column {column} has zero range")]
    ConstantColumn { column: usize },

    #[error("singular local design at evaluation point {index}")]
    SingularLocalDesign { index: usize },

    #[error("observations are affinely dependent; their convex hull is degenerate")]
    DegenerateHull,

    #[error("grid has no lattice structure")]
    NotLattice,

    #[error("QP solver failed: {0}")]
    Solver(String),

    #[error("identification failure: {0}")]
    Identification(String),

    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("bootstrap aborted: {failed} of {total} replicates failed")]
    BootstrapAborted { failed: usize, total: usize },

    #[error("malformed data: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
