//! SHA-256 digests and the keyed-digest signature stand-in.
//!
//! `sign(sk, m) = SHA-256(sk || m)`. The verifying key carries the same 32
//! bytes as the signing key, so verification recomputes the digest. This is
//! not a real signature scheme; it binds a submitter to a message, which is
//! all the pipeline checks.

use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

macro_rules! bytes32 {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
        pub struct $name(pub [u8; 32]);

        impl $name {
            pub fn as_bytes(&self) -> &[u8; 32] {
                &self.0
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }

            pub fn from_hex(s: &str) -> Option<Self> {
                let raw = hex::decode(s).ok()?;
                let arr: [u8; 32] = raw.try_into().ok()?;
                Some(Self(arr))
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), &self.to_hex()[..16])
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.to_hex())
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                if serializer.is_human_readable() {
                    serializer.serialize_str(&self.to_hex())
                } else {
                    serializer.serialize_bytes(&self.0)
                }
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                struct V;
                impl<'de> Visitor<'de> for V {
                    type Value = $name;

                    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                        f.write_str("32 bytes or 64 hex characters")
                    }

                    fn visit_str<E: de::Error>(self, v: &str) -> Result<$name, E> {
                        $name::from_hex(v).ok_or_else(|| E::custom("expected 64 hex characters"))
                    }

                    fn visit_bytes<E: de::Error>(self, v: &[u8]) -> Result<$name, E> {
                        let arr: [u8; 32] = v.try_into().map_err(|_| E::invalid_length(v.len(), &self))?;
                        Ok($name(arr))
                    }
                }
                if deserializer.is_human_readable() {
                    deserializer.deserialize_str(V)
                } else {
                    deserializer.deserialize_bytes(V)
                }
            }
        }
    };
}

bytes32!(
    /// A SHA-256 output.
    Digest
);
bytes32!(SigningKey);
bytes32!(VerifyingKey);
bytes32!(Signature);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);
}

pub fn digest(bytes: &[u8]) -> Digest {
    Digest(Sha256::digest(bytes).into())
}

/// Digest over the concatenation of `parts`, without materialising it.
pub fn digest_concat<'a>(parts: impl IntoIterator<Item = &'a [u8]>) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    Digest(h.finalize().into())
}

pub fn sign(key: &SigningKey, message: &[u8]) -> Signature {
    Signature(digest_concat([key.0.as_slice(), message]).0)
}

pub fn verify(key: &VerifyingKey, message: &[u8], signature: &Signature) -> bool {
    sign(&SigningKey(key.0), message) == *signature
}

/// Deterministic key pair for a fixture identity.
pub fn keypair_for(subject_id: &str) -> (SigningKey, VerifyingKey) {
    let d = digest_concat([b"consentledger/key/".as_slice(), subject_id.as_bytes()]);
    (SigningKey(d.0), VerifyingKey(d.0))
}
