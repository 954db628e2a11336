use thiserror::Error;

use crate::sqp::SolveStatus;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("invalid convex region: {0}")]
    InvalidRegion(String),
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ContactError {
    #[error("invalid pusher: {0}")]
    InvalidPusher(String),
    #[error("invalid support model: {0}")]
    InvalidSupport(String),
    #[error("no stable push balances wrench {0:?}")]
    NoStablePush([f64; 3]),
    #[error("motion cone degenerated to fewer than two directions")]
    EmptyCone,
    #[error("generator set is not a pointed cone")]
    NotPointed,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{field}: {message}")]
    Field { field: String, message: String },
    #[error("{path}: parse error at byte {offset} (line {line}, column {column}): {message}")]
    Parse {
        path: String,
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Contact(#[from] ContactError),
}

impl ConfigError {
    pub fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Field {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum PlanningError {
    #[error("planning failed: {reason} (solver status {status:?})")]
    PlanningFailed { status: SolveStatus, reason: String },
    #[error("oracle would enumerate {0} assignments (limit 10^4)")]
    OracleTooLarge(u128),
    #[error(transparent)]
    Contact(#[from] ContactError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

impl PlanningError {
    pub fn failed(status: SolveStatus, reason: impl Into<String>) -> Self {
        PlanningError::PlanningFailed {
            status,
            reason: reason.into(),
        }
    }
}
