use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("element {0} out of range ({1} elements)")]
    ElementOutOfRange(usize, usize),
    #[error("edge {0} is a boundary edge; the jump is the one-sided trace there")]
    BoundaryEdge(usize),
    #[error("unsupported quadrature exactness {requested} (maximum {max})")]
    UnsupportedExactness { requested: usize, max: usize },
    #[error("invalid polynomial degree: {0}")]
    InvalidDegree(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown experiment `{0}`")]
    UnknownExperiment(String),
    #[error("missing exact solution")]
    MissingExactSolution,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
