//! Scenario description: file format, validation, and compilation into
//! per-drone policy bundles.

mod compile;
mod parse;
mod types;
mod validate;

use thiserror::Error;

pub use compile::*;
pub use parse::{parse_scenario, resolve_target, serialize_scenario};
pub use types::*;
pub use validate::{validate_scenario, Violation};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}: syntax error: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown entity reference `{id}`")]
    UnknownReference { id: String, line: usize },
    #[error("invalid scenario: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("swarm {swarm}: role {role} requires parameter {param}")]
    MissingParameter { swarm: String, role: String, param: String },
}
