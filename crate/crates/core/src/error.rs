use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index ({j}, {k}) out of range for a {j_count}x{k_count} mode set")]
    IndexOutOfRange {
        j: usize,
        k: usize,
        j_count: usize,
        k_count: usize,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate kernel: {0}")]
    DegenerateKernel(String),

    #[error("degenerate state: total weight {weight:e} at node {node} is below {floor:e}")]
    DegenerateState { node: usize, weight: f64, floor: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numerical blow-up: non-finite value after {iterations} iterations ({context})")]
    NumericalBlowup { iterations: usize, context: String },

    #[error("singular linear system at pivot {0}")]
    Singular(usize),

    #[error("ensemble failed: all {n} realizations diverged ({detail})")]
    EnsembleFailed { n: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
