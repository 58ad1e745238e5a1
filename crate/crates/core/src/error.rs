//! Error types shared across the simulation and analysis modules.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// A constructor or operation was given parameters outside its domain.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A statistical routine was given fewer samples than it needs.
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    /// A coefficient evaluated to NaN or infinity.
    #[error("non-finite {what} at (t = {t}, x = {x})")]
    NumericDomain { what: &'static str, t: f64, x: f64 },

    /// Volatility must be strictly positive wherever it is evaluated.
    #[error("degenerate volatility {value} at (t = {t}, x = {x})")]
    DegenerateVolatility { t: f64, x: f64, value: f64 },

    /// The input does not carry every increment the operation needs.
    #[error("resolution error: {0}")]
    Resolution(String),

    /// Not enough data to determine any estimate.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Two ensembles that must share a horizon do not.
    #[error("horizon mismatch: {a} vs {b}")]
    HorizonMismatch { a: f64, b: f64 },

    /// A requested time lies outside the simulated horizon.
    #[error("time {t} outside horizon [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    /// An error that occurred while advancing a specific step.
    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    /// An error that occurred while simulating a specific path.
    #[error("path {path_id}: {source}")]
    AtPath {
        path_id: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn at_step(self, step: usize) -> Self {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }

    pub fn at_path(self, path_id: u64) -> Self {
        Error::AtPath {
            path_id,
            source: Box::new(self),
        }
    }

    /// Walks the annotation chain down to the underlying cause.
    pub fn root_cause(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } | Error::AtPath { source, .. } => source.root_cause(),
            other => other,
        }
    }
}
