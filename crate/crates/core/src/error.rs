use thiserror::Error;

/// Errors raised by the analytics and design routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("nuisance block singular")]
    NuisanceSingular,

    #[error("polar singularity: elevation {0} rad has no azimuth derivative")]
    PolarSingularity(f64),

    #[error("infeasible delay: c*tau = {range} m does not exceed baseline {baseline} m")]
    InfeasibleDelay { range: f64, baseline: f64 },

    #[error("baseline singularity: omega = {0}")]
    BaselineSingularity(f64),

    #[error("retraction singularity at entry {0}")]
    RetractionSingularity(usize),

    #[error("SCA infeasible at iterate: {0}")]
    ScaInfeasible(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
