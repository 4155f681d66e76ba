use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-positive area {area:e} at cell {cell}")]
    NonPositiveArea { cell: usize, area: f64 },

    #[error("time step violates the stability bound (courant number {courant:.4})")]
    Unstable { courant: f64 },

    #[error("junction solve failed after {iterations} iterations (residual {residual:e}): {reason}")]
    Junction {
        iterations: usize,
        residual: f64,
        reason: String,
    },

    #[error("boundary solve failed: {0}")]
    Boundary(String),

    #[error("invalid network: {0}")]
    Network(String),

    #[error("simulation failed at step {step} ({location}): {source}")]
    Simulation {
        step: usize,
        location: String,
        #[source]
        source: Box<Error>,
    },

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("subject {subject}: {source}")]
    Subject {
        subject: String,
        #[source]
        source: Box<Error>,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
