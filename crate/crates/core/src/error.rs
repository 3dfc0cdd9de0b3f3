use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("point {point:?} lies outside the chart domain")]
    OutOfDomain { point: Vec<f64> },
    #[error("metric degenerates at {point:?} (smallest |eigenvalue| {min_abs_eigenvalue:e})")]
    DegenerateAtPoint { point: Vec<f64>, min_abs_eigenvalue: f64 },
    #[error("metric index mismatch at {point:?}: expected {expected}, found {found}")]
    SignatureMismatch { point: Vec<f64>, expected: usize, found: usize },
    #[error("trajectory left the chart domain at t = {t}")]
    DomainExit { t: f64 },
    #[error("integrator step size underflow at t = {t}")]
    StepFailure { t: f64 },
    #[error("projector is not idempotent (defect {defect:e})")]
    ProjectorNotIdempotent { defect: f64 },
    #[error("zero vector has no causal character")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("path is not periodic")]
    NotPeriodic,
    #[error("path is not a critical point (residual {residual:e})")]
    NotCritical { residual: f64 },
    #[error("restricted product metric is degenerate on the endpoint condition (condition {condition:e})")]
    DegenerateRestriction { condition: f64 },
    #[error("variation field violates the endpoint constraint (residual {residual:e})")]
    ConstraintViolated { residual: f64 },
    #[error("Newton iteration failed after {iterations} iterations (residual {residual:e})")]
    NewtonDiverged { iterations: usize, residual: f64 },
    #[error("kernel refinement failed (boundary residual {residual:e})")]
    RefinementDiverged { residual: f64 },
    #[error("no interval where the field is transverse to the curve and the tube is embedded")]
    NoValidInterval,
    #[error("iterate sums are tangent on both windows; geodesic is likely strongly degenerate")]
    StronglyDegenerateSuspected,
    #[error("bump tube of radius {radius} overlaps another pass of the curve")]
    TubeTooWide { radius: f64 },
    #[error("perturbed metric lost its signature at {point:?}")]
    SignatureBroken { point: Vec<f64> },
    #[error("conformal factor is not positive at {point:?}")]
    NonPositiveFactor { point: Vec<f64> },
    #[error("expression error: {0}")]
    Expression(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for failures of a numerical procedure, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        !matches!(
            self,
            Error::InvalidInput(_) | Error::Expression(_) | Error::DimensionMismatch { .. }
        )
    }
}
