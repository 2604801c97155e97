use thiserror::Error;

/// Failure modes shared by every module of the library.
#[derive(Debug, Error, Clone, PartialEq, serde::Serialize)]
pub enum GlueError {
    #[error("degenerate frame: {0}")]
    DegenerateFrame(String),
    #[error("planes are not Lagrangian (defect {0:e})")]
    NotLagrangian(f64),
    #[error("parameter outside chart domain: {0}")]
    OutOfDomain(String),
    #[error("no intersection in bracket: {0}")]
    NoIntersection(String),
    #[error("angle condition violated: sum of angles is {0}, expected pi")]
    AngleConditionViolated(f64),
    #[error("quadrature did not converge: {0}")]
    QuadratureFailure(String),
    #[error("Lawlor inversion stalled after {iterations} iterations (residual {residual:e})")]
    InversionFailure {
        iterations: usize,
        residual: f64,
        best_a: Vec<f64>,
    },
    #[error("projection to graph failed: {0}")]
    ProjectionFailure(String),
    #[error("gradient samples missing for k >= 1")]
    IncompleteField,
    #[error("reduced mesh requires equal angles phi_1 = ... = phi_(m-1)")]
    SymmetryRequired,
    #[error("spectral iteration failed: {0}")]
    SpectralFailure(String),
    #[error("perturbation exceeds chart bound: {0}")]
    ChartOverflow(String),
    #[error("iteration diverged at step {step}")]
    IterationDiverged { step: usize, history: Vec<f64> },
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, GlueError>;
