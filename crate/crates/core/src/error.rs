use thiserror::Error;

/// Errors surfaced by the numerical kernels.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid construction: {0}")]
    Invalid(String),

    #[error("degenerate input: cannot normalize a vector of length {norm:.3e}")]
    DegenerateDirection { norm: f64 },

    #[error("mean over components requires finite support; this problem is continuous")]
    ContinuousSupport,

    #[error("grid node {node} maps to {point:.6} outside the domain [{lo}, {hi}]; enlarge the domain or shrink eta")]
    PointLeftDomain {
        node: usize,
        point: f64,
        lo: f64,
        hi: f64,
    },

    #[error("Newton iteration for the inverse step map failed to converge at y = {y:.6} (atom {atom})")]
    NewtonDiverged { y: f64, atom: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("matrix is not positive semi-definite: eigenvalue {eigenvalue:.3e} below tolerance")]
    NotPsd { eigenvalue: f64 },

    #[error("SDE state became non-finite at step {step}")]
    Diverged { step: usize },

    #[error("circle reduction failed its collocation check: residual {residual:.3e} at angle {theta:.4}")]
    CollocationMismatch { residual: f64, theta: f64 },

    #[error("time-refinement self-check failed: |u_n - u_2n| = {defect:.3e} exceeds {tolerance:.1e}")]
    RefinementCheck { defect: f64, tolerance: f64 },

    #[error("slope fit needs at least 3 positive errors, got {0}")]
    FitUnderdetermined(usize),

    #[error("slope fit requires positive error values, got {0:.3e}")]
    FitNonpositive(f64),

    #[error("invalid experiment plan: {0}")]
    InvalidPlan(String),
}
