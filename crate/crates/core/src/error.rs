use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("label {label} of node {node} is out of range for {num_labels} labels")]
    LabelOutOfRange {
        node: usize,
        label: usize,
        num_labels: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid marginals: {0}")]
    InvalidMarginals(String),

    #[error("invalid constraint sets: {0}")]
    InvalidConstraints(String),

    #[error("negative gradient entry {value} at node {node}, label {label}")]
    NegativeGradient { node: usize, label: usize, value: f64 },

    #[error("solver produced a non-finite value at iteration {iteration}")]
    SolverDiverged { iteration: usize },

    #[error("instance too large for exhaustive search: {num_labels}^{num_nodes} exceeds {limit}")]
    TooLarge {
        num_nodes: usize,
        num_labels: usize,
        limit: u64,
    },

    #[error("histogram has zero total mass")]
    ZeroHistogram,

    #[error("no plane found: {0}")]
    NoPlane(String),

    #[error("scene placement failed: {0}")]
    Placement(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("csv: {0}")]
    Csv(String),
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Csv(e.to_string())
    }
}
