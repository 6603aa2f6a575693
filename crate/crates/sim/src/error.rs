use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("object placement failed: {0}")]
    Placement(String),
    #[error(transparent)]
    Service(#[from] mos3d_service::ServiceError),
    #[error(transparent)]
    Core(#[from] mos3d_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
