use thiserror::Error;

/// Errors raised by the solver, its guards and the dense oracle.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty grid: an axis needs at least one interior node")]
    EmptyGrid,

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A nodal value reached the singular point of the source term.
    #[error("quench domain: component {index} has value {value}, source undefined at or beyond 1")]
    QuenchDomain { index: usize, value: f64 },

    /// Pivot breakdown in a line solve; the step is too large for the grid.
    #[error("singular factor in direction {direction}, line {line}, row {row} (pivot {pivot:e})")]
    SingularFactor { direction: usize, line: usize, row: usize, pivot: f64 },

    #[error("fixed-point source iteration did not converge in {iterations} iterations (last update {residual:e})")]
    IterationFailure { iterations: usize, residual: f64 },

    #[error("grid too large for the dense oracle: {unknowns} unknowns exceeds cap {cap}")]
    GridTooLarge { unknowns: usize, cap: usize },

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("guard blocked the run: {}", failed.join(", "))]
    GuardBlocked { failed: Vec<&'static str>, report: Box<crate::guard::CriteriaReport> },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag used in trace footers.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyGrid => "empty_grid",
            Error::InvalidGrid(_) => "invalid_grid",
            Error::InvalidInput(_) => "invalid_input",
            Error::QuenchDomain { .. } => "quench_domain",
            Error::SingularFactor { .. } => "singular_factor",
            Error::IterationFailure { .. } => "iteration_failure",
            Error::GridTooLarge { .. } => "grid_too_large",
            Error::NumericFailure(_) => "numeric_failure",
            Error::GuardBlocked { .. } => "guard_blocked",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
