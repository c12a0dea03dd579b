use thiserror::Error;

/// Errors raised anywhere in the inference library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error in {context}: {detail}")]
    Domain { context: &'static str, detail: String },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("degenerate slice in block {block}: every atom has zero weight under ancestor atoms {ancestors:?}")]
    DegenerateSlice { block: usize, ancestors: Vec<usize> },

    #[error("grid has {atoms} atoms, above the limit of {limit}")]
    GridTooLarge { atoms: usize, limit: usize },

    #[error("no sign change on [{lo}, {hi}]: g(lo) = {g_lo}, g(hi) = {g_hi}")]
    Bracketing { lo: f64, hi: f64, g_lo: f64, g_hi: f64 },

    #[error("root solve did not converge after {iterations} iterations (last residual {residual}, x = {x})")]
    RootNonConvergence { iterations: usize, residual: f64, x: f64 },

    #[error("divergence at sweep {sweep} in update `{coordinate}`: {detail}")]
    Divergence { sweep: usize, coordinate: String, detail: String },

    #[error("objective increased by {increase:e} at sweep {sweep} (allowed slack {slack:e})")]
    ObjectiveIncrease { sweep: usize, increase: f64, slack: f64 },

    #[error("linear solve failed: {0}")]
    LinearSolve(String),

    #[error("coordinate descent did not converge after {iterations} passes (max change {max_change:e})")]
    CdNonConvergence { iterations: usize, max_change: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("in `{coordinate}`: {source}")]
    Coordinate {
        coordinate: String,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(context: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain { context, detail: detail.into() }
    }

    pub(crate) fn in_coordinate(self, coordinate: impl Into<String>) -> Self {
        Error::Coordinate { coordinate: coordinate.into(), source: Box::new(self) }
    }
}
