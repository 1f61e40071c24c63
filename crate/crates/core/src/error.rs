use alloc::string::String;

use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("parse error at position {position}: {message}")]
    Parse { position: usize, message: String },

    #[error("shape mismatch in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("constrained sampling failed after {attempts} attempts: {reason}")]
    ConstrainedSampling { attempts: usize, reason: String },

    #[error("phase order violation: expected {expected}, found {found}")]
    PhaseOrder {
        expected: &'static str,
        found: &'static str,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("unknown head: {0}")]
    UnknownHead(String),
}
