use thiserror::Error;

/// Errors produced anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("topology generation failed: {0}")]
    TopologyGeneration(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("combination matrix is not primitive: {0}")]
    NotPrimitive(String),

    #[error("matrix is not positive semidefinite (smallest eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("{method} requires a positive semidefinite combination matrix (smallest eigenvalue {min_eig:e})")]
    RequiresPsd { method: String, min_eig: f64 },

    #[error("{method} is unstable: block for eigenvalue {lambda} has spectral radius {radius}")]
    UnstableMethod {
        method: String,
        lambda: f64,
        radius: f64,
    },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("iterates diverged at iteration {iteration}")]
    NumericOverflow { iteration: usize },

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("unavailable: {0}")]
    Unavailable(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
