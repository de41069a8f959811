//! Private audit blockchain: pending pool, round-robin sealing, trail queries
//! and offline re-verification.

mod chain;
mod transaction;

pub use chain::*;
pub use transaction::*;
