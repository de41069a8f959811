//! Proof-of-compliance network: ordering, validation, auditor quorum and
//! commit over a deterministic message bus.

pub mod auditor;
pub mod bus;
pub mod network;
pub mod phases;

use thiserror::Error;

pub use auditor::{Auditor, Behaviour, Vote};
pub use network::{run_network, FaultPlan, NetworkConfig, PocOutcome};
pub use phases::{
    aggregate, phase1_order, phase2_validate, phase3_audit, phase4_commit, ComplianceVerdict, DroppedTx, Ordering,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PocError {
    #[error("network config: {0}")]
    Config(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
}
