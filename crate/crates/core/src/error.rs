use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("decay factor at step {step} is {value}, expected a value in (0, 1)")]
    DecayOutOfRange { step: usize, value: f64 },
    #[error("invalid index range: {0}")]
    InvalidRange(String),
    #[error("layer {0} is not covered by the step table")]
    UncoveredLayer(usize),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid reduction pattern: {0}")]
    InvalidPattern(String),
    #[error("token budget must be at least one")]
    ZeroBudget,
    #[error("index {index} out of range for {len} visual tokens")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("selection indices must be strictly increasing")]
    UnsortedSelection,
    #[error("scores carry no mass")]
    ZeroMass,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("at least two elements are required")]
    TooShort,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("layer {0} is not a Mamba layer")]
    NotMamba(usize),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
