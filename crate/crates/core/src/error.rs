//! Error type shared by every kinematics operation.

use thiserror::Error;

/// Failures reported by the kinematics engine.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum KinematicsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// The mode vector cannot be split into head/body sectors.
    #[error("malformed layout: {0}")]
    MalformedLayout(String),
    /// Joint values violate the sector constraints (body twist must be zero,
    /// body bends must be equal).
    #[error("inconsistent configuration: {0}")]
    InconsistentConfiguration(String),
    /// A cached pose was computed for a different configuration.
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("singular system: J*J^T is not invertible without damping")]
    SingularSystem,
    #[error("no further states: every functional link is already a head")]
    NoFurtherStates,
    #[error("invalid transition: {0}")]
    InvalidTransition(String),
    #[error("no functional degrees of freedom: every link is damaged")]
    NoFunctionalDofs,
}

pub type Result<T> = std::result::Result<T, KinematicsError>;

pub(crate) fn invalid_arg(msg: impl Into<String>) -> KinematicsError {
    KinematicsError::InvalidArgument(msg.into())
}
