//! Consent-aware access control with hash-chained audit trails and a
//! proof-of-compliance auditor network, all driven by a simulated clock.

pub mod anchor;
pub mod audit;
pub mod consent;
pub mod model;
pub mod poc;
pub mod policy;
pub mod scenario;
pub mod verifier;
