use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension {0} has zero or negative width")]
    ZeroWidthDimension(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("duplicate sample at row {0}")]
    DuplicatePoint(usize),
    #[error("scale parameter theta[{0}] must be positive")]
    NonPositiveScale(usize),
    #[error("correlation matrix is not positive definite (nugget {nugget:e})")]
    NotPositiveDefinite { nugget: f64 },
    #[error("leave-one-out block entry B[{0},{0}] is not positive")]
    SingularBlock(usize),
    #[error("PLS weights are rank deficient after {0} components")]
    RankDeficient(usize),
    #[error("every candidate was rejected by the distance threshold")]
    AllCandidatesRejected,
    #[error("no candidate satisfies the distance constraint")]
    InfeasibleConstraint,
    #[error("a Voronoi cell of the candidate pool is empty")]
    EmptyCell,
    #[error("every rank produced a clustered optimum")]
    AllRanksExhausted,
    #[error("committee member {0} has fewer than two samples")]
    DegenerateCommittee(usize),
    #[error("proposed point lies within {0:e} of an existing sample")]
    ClusteringDetected(f64),
    #[error("point outside the problem domain in dimension {0}")]
    OutOfDomain(usize),
    #[error("problem '{0}' has no low-fidelity function")]
    NotMultifidelity(String),
    #[error("unknown name '{0}'")]
    UnknownName(String),
    #[error("integrator step size fell below {0:e} at t = {1}")]
    StepSizeUnderflow(f64, f64),
    #[error("trajectory became non-finite at t = {0}")]
    NonFiniteTrajectory(f64),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error on {path}: {msg}")]
    Io { path: String, msg: String },
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        Error::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        }
    }
}
