use thiserror::Error;

pub type Result<T, E = HdgError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HdgError {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("index out of range: {0}")]
    IndexOutOfRange(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("missing boundary data: {0}")]
    MissingBoundaryData(String),
    #[error("layout mismatch: expected {expected} unknowns, got {got}")]
    LayoutMismatch { expected: usize, got: usize },
    #[error("singular local block on element ({i}, {j})")]
    SingularElementBlock { i: usize, j: usize },
    #[error("sparse factorization failed: {0}")]
    Factorization(String),
    #[error("Newton did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        /// Last iterate, free unknowns only.
        iterate: Vec<f64>,
    },
    #[error("step to t = {time} failed: {source}")]
    StepFailed {
        time: f64,
        #[source]
        source: Box<HdgError>,
    },
    #[error("stabilization assumption violated: {0}")]
    StabilityAssumption(String),
}

impl HdgError {
    /// True when the underlying cause is a nonlinear solver failure.
    pub fn is_nonconvergence(&self) -> bool {
        match self {
            HdgError::NonConvergence { .. } => true,
            HdgError::StepFailed { source, .. } => source.is_nonconvergence(),
            _ => false,
        }
    }
}
