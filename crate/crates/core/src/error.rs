use thiserror::Error;

/// Errors raised by the field, solver, and analysis layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("dimension mismatch: expected {expected} values, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("grid mismatch between inputs: {0}")]
    GridMismatch(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("pressure oracle refuses n_per_axis = {n}; the cap is {cap}")]
    OracleTooLarge { n: usize, cap: usize },

    #[error("index {index} out of range for schedule of length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("time {time} outside trajectory range [{start}, {end}]")]
    TimeOutOfRange { time: f64, start: f64, end: f64 },

    #[error("time {time} is not a sampled node of the trajectory")]
    NotANode { time: f64 },

    #[error("cylinder rejected: {0}")]
    Cylinder(String),

    #[error("radius {radius} below the resolution floor {floor}")]
    BelowResolution { radius: f64, floor: f64 },

    #[error("exponent condition {condition} violated: {detail}")]
    ExponentCondition { condition: &'static str, detail: String },

    #[error("rejected input: {0}")]
    Rejected(String),

    #[error("step rejected at t = {time}: dt exceeds the CFL limit {limit_dt} (max |u| = {max_speed})")]
    CflViolation { time: f64, max_speed: f64, limit_dt: f64 },

    #[error("non-finite values after the last valid time {last_valid_time}")]
    BlowUp { last_valid_time: f64 },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for CoreError {
    fn from(err: std::io::Error) -> Self {
        CoreError::Io(err.to_string())
    }
}

pub type Result<T, E = CoreError> = std::result::Result<T, E>;
