//! The error type stage executors share.

use thiserror::Error;

use crate::backend::BackendError;
use crate::planner::PlannerError;
use crate::topology::TopologyError;
use crate::types::{DirectiveViolation, TypeError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Type(#[from] TypeError),
    #[error("plan override violates directive invariants: {}", format_violations(.0))]
    InvalidOverride(Vec<DirectiveViolation>),
    #[error("{0}")]
    Precondition(String),
}

impl From<PlannerError> for EngineError {
    fn from(err: PlannerError) -> Self {
        match err {
            PlannerError::Backend(e) => EngineError::Backend(e),
            PlannerError::NoStreams => EngineError::Precondition("no streams available to plan over".into()),
        }
    }
}

fn format_violations(violations: &[DirectiveViolation]) -> String {
    violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}
