use thiserror::Error;

/// Errors raised by the fitting, simulation and forecasting routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("objective is not finite at the starting point")]
    InvalidStart,

    #[error("integration failed: {0}")]
    Integration(String),

    #[error("catalog is empty")]
    EmptyCatalog,

    #[error("failed to parse {path}: {count} malformed row(s)\n{details}")]
    Parse {
        path: String,
        count: usize,
        details: String,
    },

    #[error("I/O failure on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("supercritical parameters: expected offspring per event is {ratio:.4} (must be < 1)")]
    Supercritical { ratio: f64 },

    #[error("intensity is not positive at t = {t}")]
    NonPositiveIntensity { t: f64 },

    #[error("point ({x}, {y}) lies outside the grid")]
    OutsideGrid { x: f64, y: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
