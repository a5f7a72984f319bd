use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("ill-conditioned Gram system at base point {base}: condition number {cond:.3e}")]
    IllConditioned { base: usize, cond: f64 },

    #[error("kernel dimension varies over the base: {found} at base point {base}, expected {expected}")]
    KernelJump { base: usize, found: usize, expected: usize },

    #[error("deformation is not integrable: (0,2) curvature {defect:.3e} exceeds {tol:.1e}")]
    NotIntegrable { defect: f64, tol: f64 },

    #[error("flow blew up at t = {t:.6}, step {step}: {what}")]
    BlowUp { t: f64, step: usize, what: String },

    #[error("no convergence after {steps} steps: residual {residual:.3e} above tolerance {tol:.1e}")]
    NoConvergence { steps: usize, residual: f64, tol: f64 },

    #[error("family Hermite-Einstein equation fails at the input metric: holomorphic obstruction {norm:.3e} exceeds {tol:.1e}")]
    Obstruction { norm: f64, tol: f64 },

    #[error("boundary data mismatch: initial metric differs from boundary data by {0:.3e}")]
    BoundaryMismatch(f64),
}

pub type Result<T> = std::result::Result<T, Error>;
