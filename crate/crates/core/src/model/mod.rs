//! Domain types, canonical encoding, digests and signatures.

pub mod canonical;
pub mod crypto;
pub mod types;

pub use canonical::{from_bytes, to_bytes, Canonical, CanonicalError};
pub use crypto::{digest, digest_concat, keypair_for, sign, verify, Digest, Signature, SigningKey, VerifyingKey};
pub use types::*;
