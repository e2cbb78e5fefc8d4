use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Argument outside the domain of a function.
    #[error("domain error in {func}: argument {value} {expected}")]
    Domain {
        func: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("{what} did not converge within {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },

    #[error("failed to bracket a minimum of {what}: {detail}")]
    Bracket { what: &'static str, detail: String },

    #[error("sampled function has no finite value")]
    EmptyDomain,

    #[error("requested window [{lo}, {hi}] misses the effective domain [{dom_lo}, {dom_hi}]")]
    IncompatibleWindow {
        lo: f64,
        hi: f64,
        dom_lo: f64,
        dom_hi: f64,
    },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid dimensions: {0}")]
    InvalidDimension(String),

    #[error("time {time} is not a node of the grid (step {step})")]
    OffGrid { time: f64, step: f64 },

    #[error("line index out of range: {0}")]
    IndexRange(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn domain(func: &'static str, value: f64, expected: &'static str) -> Self {
        Error::Domain {
            func,
            value,
            expected,
        }
    }
}
