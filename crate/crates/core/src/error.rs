use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty signal")]
    EmptySignal,
    #[error("channel {channel} has {got} samples, expected {expected}")]
    ChannelLengthMismatch {
        channel: usize,
        expected: usize,
        got: usize,
    },
    #[error("signal of {len} samples is shorter than one frame ({frame_len})")]
    SignalTooShort { len: usize, frame_len: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid array geometry: {0}")]
    InvalidGeometry(String),
    #[error("cannot build a blocking matrix for a zero steering vector")]
    ZeroVector,
    #[error("input has {got} channels, geometry has {expected}")]
    ChannelCountMismatch { expected: usize, got: usize },
    #[error("input sample rate {got} Hz does not match configured {expected} Hz")]
    SampleRateMismatch { expected: u32, got: u32 },
    #[error("degenerate component: {0}")]
    DegenerateComponent(String),
    #[error("reference signal is silent")]
    SilentReference,
    #[error("trace does not match input: {0}")]
    TraceMismatch(String),
    #[error("component shadows miss the enhanced output by {relative_error:e} relative")]
    Superposition { relative_error: f64 },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
