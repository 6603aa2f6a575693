use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("cell {0} is outside the region bounds")]
    OutOfBounds(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("belief has zero total mass")]
    EmptyBelief,
    #[error("degenerate belief initialization: {0}")]
    DegenerateBelief(String),
    #[error("no free space available for view positions")]
    EmptyGraph,
    #[error("illegal action: {0}")]
    IllegalAction(String),
    #[error("malformed input: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
