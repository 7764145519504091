use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("point maps to the line at infinity")]
    HomographyAtInfinity,
    #[error("degenerate minimal sample")]
    DegenerateSample,
    #[error("hypothesis cannot be embedded: a canvas corner maps near infinity")]
    UnstableHypothesis,
    #[error("latent dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("invalid probability: {0}")]
    InvalidProbability(String),
    #[error("not enough matches: need at least {needed}, got {got}")]
    NotEnoughMatches { needed: usize, got: usize },
    #[error("{0} consecutive degenerate samples drawn")]
    AllSamplesDegenerate(u64),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("resource error: {0}")]
    Resource(String),
    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
