use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Inconsistent dimensions or parameters supplied at construction time.
    #[error("configuration error: {0}")]
    Config(String),

    /// A user-supplied metric violated symmetry or positive definiteness.
    #[error("metric validation failed: {reason} (smallest eigenvalue {min_eigenvalue:e})")]
    InvalidMetric { reason: String, min_eigenvalue: f64 },

    #[error("metric is numerically singular (condition estimate {condition:e})")]
    SingularMetric { condition: f64 },

    /// A potential returned NaN or infinity.
    #[error("non-finite {quantity} at state {state:?} (t = {time})")]
    Evaluation {
        quantity: &'static str,
        state: Vec<f64>,
        time: f64,
    },

    #[error("integration diverged at t = {time}: state {state:?}")]
    Divergence { time: f64, state: Vec<f64> },

    /// An operation was called outside its contract.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("fast equilibrium solver did not converge after {iterations} iterations (residual {residual:e}, best h = {best:?})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },

    /// The fast equilibrium exists but is not strongly stable.
    #[error("stability violation at c = {c:?}: h* = {h_star:?}, margin {margin:e}")]
    StabilityViolation { c: Vec<f64>, h_star: Vec<f64>, margin: f64 },

    /// Different initial guesses converged to different fast equilibria.
    #[error("fast equilibrium is branch-dependent at c = {c:?}: found {solutions:?}")]
    BranchDependence { c: Vec<f64>, solutions: Vec<Vec<f64>> },

    #[error("domain error: {0}")]
    Domain(String),

    /// Regression abscissae have zero variance.
    #[error("degenerate fit: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, Error>;
