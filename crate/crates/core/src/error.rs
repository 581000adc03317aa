use thiserror::Error;

/// Errors produced by map loading, filtering, simulation and learning.
#[derive(Debug, Error)]
pub enum Error {
    #[error("image decode failed: {0}")]
    Image(#[from] image::ImageError),

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("ray origin ({x:.2}, {y:.2}) outside map bounds {width}x{height}")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },

    #[error("map has no occupied cells")]
    EmptyMap,

    #[error("degenerate particle set: {diagnostics}")]
    DegenerateParticleSet { diagnostics: String },

    #[error("infeasible trajectory: segment from ({0:.2}, {1:.2}) to ({2:.2}, {3:.2}) is blocked")]
    InfeasibleTrajectory(f64, f64, f64, f64),

    #[error("log parse error at line {line}: {message}")]
    LogParse { line: usize, message: String },

    #[error("metadata parse error: {0}")]
    Metadata(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
