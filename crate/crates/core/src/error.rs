use thiserror::Error;

/// Errors surfaced by the solver library.
#[derive(Debug, Error)]
pub enum SolverError {
    #[error("field contains non-finite values ({context})")]
    InvalidField { context: String },

    #[error("fields live on different grids ({context})")]
    GridMismatch { context: String },

    #[error("nonlinearity rejected: {reason}")]
    InvalidNonlinearity { reason: String },

    #[error("ray of the field peaks below level b = {level}")]
    NotAboveLevel { level: f64 },

    #[error("no crossing scale with V = {level} found on the ray")]
    NoCrossing { level: f64 },

    #[error("shooting bracket failed: {reason}")]
    ShootingFailed { reason: String },

    #[error("sampling dictionary too small: {admissible} admissible members, need {floor}")]
    DictionaryTooSmall { admissible: usize, floor: usize },

    #[error("trajectory violates V >= b on an unbounded window (slice {slice}, V - b = {deficit:.3e})")]
    ConstraintViolated { slice: usize, deficit: f64 },

    #[error("minimizer did not converge: projected-gradient norm {grad_norm:.3e} after {iterations} iterations")]
    NotConverged { grad_norm: f64, iterations: usize },

    #[error("constraint projection failed on slice {slice}: ray peaks below b")]
    ConstraintProjectionFailed { slice: usize },

    #[error("no transition detected: no slice reaches V <= b on the upper side")]
    NoTransition,

    #[error("core segment not converged; refusing to assemble")]
    CoreNotConverged,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SolverError>;
