//! Contract-based access control: repositories, decision procedure and the
//! administration / information / enforcement points.

mod decision;
mod engine;
mod repository;
mod rules;

use thiserror::Error;

pub use decision::*;
pub use engine::*;
pub use repository::*;
pub use rules::*;

use crate::anchor::AnchorError;
use crate::consent::ConsentError;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PolicyError {
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("no entity `{0}` to update")]
    UnknownId(String),
    #[error("unknown subject `{0}`")]
    UnknownSubject(String),
    #[error("unknown object `{0}`")]
    UnknownObject(String),
    #[error(transparent)]
    Consent(#[from] ConsentError),
    #[error(transparent)]
    Anchor(#[from] AnchorError),
}
