use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("event {index}: timestamp {t} is not after the previous event at {prev}")]
    UnorderedTimestamps { index: usize, t: f64, prev: f64 },
    #[error("event {index}: time {t} lies outside the observation window [{t0}, {t_end}]")]
    EventOutsideWindow { index: usize, t: f64, t0: f64, t_end: f64 },
    #[error("event {index}: action {action} attached to non-request type {v}")]
    ActionOnNonRequest { index: usize, v: u32, action: u32 },
    #[error("event {index}: request event carries no action")]
    RequestWithoutAction { index: usize },
    #[error("event index {index} out of range 1..={len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid window: {0}")]
    InvalidWindow(String),

    #[error("invalid distribution parameters: {0}")]
    InvalidParams(String),
    #[error("probability level {0} is outside [0, 1)")]
    EtaOutOfRange(f64),

    #[error("unknown event type code {0}")]
    UnknownTypeCode(u32),
    #[error("unknown action code {0}")]
    UnknownActionCode(u32),
    #[error("non-finite activation in the encoder at step {step}")]
    NonFiniteActivation { step: usize },
    #[error("backward pass needs {expected} cached steps, got {found}")]
    MissingForwardCache { expected: usize, found: usize },

    #[error("invalid record for user {user}: {source}")]
    InvalidRecord {
        user: String,
        #[source]
        source: Box<Error>,
    },
    #[error("optimization diverged at iteration {iteration}: {what}")]
    DivergenceDetected { iteration: usize, what: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("schema version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: String, found: String },
    #[error("{path}:{line}: parse error: {message}")]
    ParseError { path: String, line: usize, message: String },
    #[error("validation error for user {user}: {reason}")]
    ValidationError { user: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
