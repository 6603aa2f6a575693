use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ServiceError {
    #[error("invalid configuration: {}", .0.join("; "))]
    Validation(Vec<String>),
    #[error("unknown session '{0}'")]
    UnknownSession(String),
    #[error("session '{0}' already exists")]
    SessionExists(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error(transparent)]
    Core(#[from] mos3d_core::Error),
}

impl From<ServiceError> for tonic::Status {
    fn from(e: ServiceError) -> Self {
        let msg = e.to_string();
        match e {
            ServiceError::Validation(_) | ServiceError::BadRequest(_) => tonic::Status::invalid_argument(msg),
            ServiceError::UnknownSession(_) => tonic::Status::not_found(msg),
            ServiceError::SessionExists(_) => tonic::Status::already_exists(msg),
            ServiceError::Precondition(_) => tonic::Status::failed_precondition(msg),
            ServiceError::Core(
                mos3d_core::Error::OutOfBounds(_)
                | mos3d_core::Error::Config(_)
                | mos3d_core::Error::Parameter(_)
                | mos3d_core::Error::Parse(_)
                | mos3d_core::Error::IllegalAction(_),
            ) => tonic::Status::invalid_argument(msg),
            ServiceError::Core(_) => tonic::Status::internal(msg),
        }
    }
}
