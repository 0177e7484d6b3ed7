use thiserror::Error;

/// Errors raised by model construction, analysis and estimation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid quantizer: {0}")]
    InvalidQuantizer(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("non-positive variance {variance} for sensor {sensor}")]
    NonPositiveVariance { sensor: usize, variance: f64 },
    #[error("attack group {0} is empty")]
    EmptyGroup(usize),
    #[error("insufficient unattacked data: {0}")]
    InsufficientUnattackedData(String),
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("group {group} does not satisfy the parameter-shift form (deviation {deviation:e})")]
    ShiftFormMismatch { group: usize, deviation: f64 },
    #[error("degenerate derivative stack for group {0}")]
    DegenerateDerivatives(usize),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid solver options: {0}")]
    InvalidOptions(String),
    #[error("no feasible start for the barrier problem: {0}")]
    Infeasible(String),
    #[error("unknown scenario preset `{0}`")]
    UnknownPreset(String),
    #[error("unknown override `{0}`")]
    UnknownOverride(String),
    #[error("scenario is not admissible: {0}")]
    Inadmissible(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
