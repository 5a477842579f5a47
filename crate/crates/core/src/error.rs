use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("track does not close: position gap {position_gap:.3e} m, heading gap {heading_gap:.3e} rad")]
    ClosureViolation { position_gap: f64, heading_gap: f64 },

    #[error("invalid track geometry: {0}")]
    Geometry(String),

    #[error("projection ambiguous: candidates at s = {s1:.3} m and s = {s2:.3} m")]
    ProjectionAmbiguous { s1: f64, s2: f64 },

    #[error("random track generation failed after {0} attempts")]
    GenerationFailed(usize),

    #[error("dynamic bicycle model singular at v_x = {0} m/s")]
    ModelSingularity(f64),

    #[error("integration produced a non-finite state")]
    NonFiniteState,

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("matrix is not positive definite")]
    Factorization,

    #[error("hyperparameter optimization diverged")]
    OptimizationDiverged,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("sample path left the track corridor at step {0}")]
    SampleDiverged(usize),

    #[error("solver failed: {0}")]
    SolverFailed(String),

    #[error("SQP produced a non-finite iterate")]
    NonFiniteIterate,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no interaction samples to evaluate")]
    NoInteractionSamples,

    #[error("empty input")]
    EmptyInput,

    #[error("unsupported model format {0:?}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Geometry(_)
            | Error::ClosureViolation { .. }
            | Error::DimensionMismatch { .. }
            | Error::Format(_)
            | Error::Json(_) => 2,
            Error::Io(_) | Error::Csv(_) => 1,
            _ => 3,
        }
    }
}
