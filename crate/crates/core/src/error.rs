use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("singular configuration: bodies {0} and {1} are coincident")]
    SingularConfiguration(usize, usize),

    #[error("chart violation: last Jacobi component too small ({0:.3e})")]
    ChartViolation(f64),

    #[error("invalid mass system: {0}")]
    InvalidMasses(String),

    #[error("invalid cluster partition: {0}")]
    InvalidPartition(String),

    #[error("integration step underflow at t = {t}: {reason}")]
    StepUnderflow { t: f64, reason: String },

    #[error("no collision detected within the time bound {0}")]
    NoCollision(f64),

    #[error("no sign change of the miss function over the shooting bracket")]
    NoBracket,

    #[error("window too short: {0}")]
    InsufficientWindow(String),

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("solver did not converge: {0}")]
    NoConvergence(String),

    #[error("segment verification setup invalid: {0}")]
    InvalidSegment(String),

    #[error("config error in field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
