use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("missing dataset key: {0}")]
    Lookup(String),

    #[error("degenerate profile for {0}: max equals mean")]
    DegenerateProfile(String),

    #[error("inference error for `{parameter}`: {message}")]
    Inference { parameter: String, message: String },

    #[error("LP solver returned {status} after {iterations} iterations: {message}")]
    Solver {
        status: String,
        iterations: i64,
        message: String,
    },

    #[error("simulation failed at step {step}: {source}")]
    Simulation {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{failed} of {total} work units failed (first: {first})")]
    PartialFailure { failed: usize, total: usize, first: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn inference(parameter: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Inference {
            parameter: parameter.into(),
            message: message.into(),
        }
    }

    /// True for failures originating in the LP backend, including those
    /// wrapped by the simulator.
    pub fn is_solver(&self) -> bool {
        match self {
            Error::Solver { .. } => true,
            Error::Simulation { source, .. } => source.is_solver(),
            _ => false,
        }
    }
}
