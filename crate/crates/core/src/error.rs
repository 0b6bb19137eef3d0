use thiserror::Error;

use crate::skin::Violation;

/// Errors raised anywhere in the recognition pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("joint count mismatch: chain has {expected} joints, state has {got}")]
    JointCount { expected: usize, got: usize },

    #[error("unknown taxel id {0}")]
    UnknownTaxel(usize),

    #[error("invalid skin configuration ({} violations): {}", .0.len(), join_violations(.0))]
    InvalidConfig(Vec<Violation>),

    #[error("invalid gesture script: {0}")]
    InvalidScript(String),

    #[error("infeasible {class} gesture: {reason}")]
    Infeasible { class: String, reason: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite loss: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("training split contains {0} class(es); at least 2 are required")]
    InsufficientClasses(usize),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("skin config hash mismatch: expected {expected}, found {found}")]
    HashMismatch { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
