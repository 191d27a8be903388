//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the library and mapped to CLI exit categories.
#[derive(Debug, Error)]
pub enum Error {
    /// Kinematic parameters violate `|Y_l - Y_r| > 1e-6` (or another hard invariant).
    #[error("degenerate kinematic parameters: {0}")]
    DegenerateParams(String),

    /// Too few sufficiently-excited samples to initialize the track width.
    #[error("insufficient excitation: {retained} samples above the gyro threshold, need {needed}")]
    InsufficientExcitation { retained: usize, needed: usize },

    /// Encoder stream has an interior gap larger than the guard threshold.
    #[error("measurement gap of {gap:.3} s inside [{t_start:.3}, {t_end:.3}]")]
    MeasurementGap { gap: f64, t_start: f64, t_end: f64 },

    /// Measurements do not cover the requested integration interval.
    #[error("measurements do not cover [{t_start:.3}, {t_end:.3}]")]
    InsufficientCoverage { t_start: f64, t_end: f64 },

    /// Fewer samples than an operation requires.
    #[error("{op} needs at least {needed} samples, got {got}")]
    TooFewSamples { op: &'static str, needed: usize, got: usize },

    /// Motion-manifold gradient exceeded the sanity bound along the path.
    #[error("manifold gradient norm {norm:.3} exceeds {limit} at ({x:.2}, {y:.2})")]
    ManifoldGradientBlowup { norm: f64, limit: f64, x: f64, y: f64 },

    /// A landmark fell behind the camera during residual evaluation.
    #[error("negative depth {depth:.4} m for landmark {landmark}")]
    NegativeDepth { landmark: u64, depth: f64 },

    /// Triangulation failed; the feature is skipped rather than estimated.
    #[error("triangulation failed: {0}")]
    Triangulation(String),

    /// The nonlinear solver could not decrease the cost.
    #[error("solver diverged after {escalations} damping escalations (cost {cost:.6e})")]
    SolverDiverged { escalations: usize, cost: f64 },

    /// Observability matrix construction got inconsistent variant/params.
    #[error("variant mismatch: {0}")]
    VariantMismatch(String),

    /// Scenario/profile configuration is invalid.
    #[error("config parse error: field `{field}`: {message}")]
    ConfigParse { field: String, message: String },

    /// A required measurement stream is missing from the log.
    #[error("log is missing required stream `{0}`")]
    StreamMissing(&'static str),

    /// Malformed measurement log.
    #[error("log parse error at line {line}: {message}")]
    LogParse { line: usize, message: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable category used by the CLI for exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::DegenerateParams(_) => "degenerate-params",
            Error::InsufficientExcitation { .. } => "insufficient-excitation",
            Error::MeasurementGap { .. } => "measurement-gap",
            Error::InsufficientCoverage { .. } => "insufficient-coverage",
            Error::TooFewSamples { .. } => "too-few-samples",
            Error::ManifoldGradientBlowup { .. } => "manifold-gradient-blowup",
            Error::NegativeDepth { .. } => "negative-depth",
            Error::Triangulation(_) => "triangulation-failure",
            Error::SolverDiverged { .. } => "solver-diverged",
            Error::VariantMismatch(_) => "variant-mismatch",
            Error::ConfigParse { .. } => "config-parse",
            Error::StreamMissing(_) => "stream-missing",
            Error::LogParse { .. } => "log-parse",
            Error::Precondition(_) => "precondition",
            Error::Io(_) => "io",
        }
    }
}
