use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("point ({x}, {y}) coincides with an antenna")]
    CoincidentPoints { x: f64, y: f64 },

    #[error("target at ({x}, {y}) maps outside the range window of pair ({tx}, {rx})")]
    OutsideWindow { tx: usize, rx: usize, x: f64, y: f64 },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("matrix shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("reference matrix has zero norm")]
    ZeroReference,

    #[error("pair ({tx}, {rx}) has an all-zero correlation")]
    FlatCorrelation { tx: usize, rx: usize },

    #[error("every grid candidate fell outside the range windows")]
    NoCandidates,

    #[error("duplicate Doppler frequencies; coherence bound requires distinct members")]
    DuplicateDoppler,

    #[error("linear algebra failure: {0}")]
    Numerical(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("{stage} failed for pair ({tx}, {rx}): {source}")]
    Stage {
        stage: &'static str,
        tx: usize,
        rx: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str, pair: (usize, usize)) -> Self {
        Error::Stage {
            stage,
            tx: pair.0,
            rx: pair.1,
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad user input rather than a failed computation.
    pub fn is_config(&self) -> bool {
        match self {
            Error::InvalidParameter { .. } | Error::Config(_) | Error::Format { .. } => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
