//! Write-once public anchor registry and the blind relay that writes to it.
//!
//! Keys are namespaced: `audit:<height>`, `ppa:<id>`, `ptt:<id>`, and
//! `<kind>:<id>@<version>` for administration-point registrations.

use std::collections::BTreeMap;
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Digest;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AnchorError {
    #[error("key `{0}` is already anchored")]
    AlreadyAnchored(String),
    #[error("key `{0}` was never anchored")]
    UnknownKey(String),
    #[error("anchor dump line {line}: {message}")]
    Dump { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorEntry {
    pub key: String,
    pub digest: Digest,
    pub anchored_at: u64,
}

/// Proof of a write. Carries no digest and nothing about other keys.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub key: String,
    pub anchored_at: u64,
    pub position: u64,
}

pub fn audit_key(height: u64) -> String {
    format!("audit:{height}")
}

pub fn ppa_key(ppa_id: &str) -> String {
    format!("ppa:{ppa_id}")
}

pub fn ptt_key(ptt_id: &str) -> String {
    format!("ptt:{ptt_id}")
}

#[derive(Debug, Default)]
pub struct AnchorRegistry {
    entries: RwLock<BTreeMap<String, AnchorEntry>>,
}

impl AnchorRegistry {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    fn write(&self, key: String, digest: Digest, at: u64) -> Result<Receipt, AnchorError> {
        let mut entries = self.entries.write().expect("anchor lock poisoned");
        if entries.contains_key(&key) {
            return Err(AnchorError::AlreadyAnchored(key));
        }
        let position = entries.len() as u64;
        entries.insert(key.clone(), AnchorEntry { key: key.clone(), digest, anchored_at: at });
        Ok(Receipt { key, anchored_at: at, position })
    }

    pub fn lookup(&self, key: &str) -> Result<Digest, AnchorError> {
        self.entry(key).map(|e| e.digest)
    }

    pub fn entry(&self, key: &str) -> Result<AnchorEntry, AnchorError> {
        let entries = self.entries.read().expect("anchor lock poisoned");
        entries.get(key).cloned().ok_or_else(|| AnchorError::UnknownKey(key.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("anchor lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// One JSON object per line, in key order.
    pub fn export_jsonl(&self) -> String {
        let entries = self.entries.read().expect("anchor lock poisoned");
        let mut out = String::new();
        for e in entries.values() {
            out.push_str(&serde_json::to_string(e).expect("anchor entries serialize"));
            out.push('\n');
        }
        out
    }

    pub fn import_jsonl(text: &str) -> Result<Arc<Self>, AnchorError> {
        let reg = Self::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let e: AnchorEntry = serde_json::from_str(line)
                .map_err(|err| AnchorError::Dump { line: i + 1, message: err.to_string() })?;
            reg.write(e.key, e.digest, e.anchored_at)
                .map_err(|err| AnchorError::Dump { line: i + 1, message: err.to_string() })?;
        }
        Ok(Arc::new(reg))
    }
}

/// Write-only handle onto a registry. Holders can anchor digests but cannot
/// read anything back through it.
#[derive(Debug, Clone)]
pub struct AnchorRelay {
    target: Arc<AnchorRegistry>,
}

impl AnchorRelay {
    pub fn new(target: Arc<AnchorRegistry>) -> Self {
        AnchorRelay { target }
    }

    pub fn relay_anchor(&self, key: &str, digest: Digest, at: u64) -> Result<Receipt, AnchorError> {
        self.target.write(key.to_string(), digest, at)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::digest;

    #[test]
    fn write_once() {
        let reg = AnchorRegistry::new();
        let relay = AnchorRelay::new(reg.clone());
        let h0 = digest(b"block0");
        let r = relay.relay_anchor(&audit_key(0), h0, 10).unwrap();
        assert_eq!(r.key, "audit:0");
        assert_eq!(
            relay.relay_anchor(&audit_key(0), digest(b"other"), 11),
            Err(AnchorError::AlreadyAnchored("audit:0".into()))
        );
        assert_eq!(reg.lookup("audit:0").unwrap(), h0);
    }

    #[test]
    fn unknown_key() {
        let reg = AnchorRegistry::new();
        assert_eq!(reg.lookup("ppa:nope"), Err(AnchorError::UnknownKey("ppa:nope".into())));
    }

    #[test]
    fn dump_round_trip() {
        let reg = AnchorRegistry::new();
        let relay = AnchorRelay::new(reg.clone());
        for i in 0..5u64 {
            relay.relay_anchor(&audit_key(i), digest(&i.to_be_bytes()), i).unwrap();
        }
        relay.relay_anchor(&ppa_key("PPA-PT1001-1"), digest(b"ppa"), 3).unwrap();
        let dump = reg.export_jsonl();
        let back = AnchorRegistry::import_jsonl(&dump).unwrap();
        assert_eq!(back.export_jsonl(), dump);
        assert_eq!(back.lookup("audit:3").unwrap(), digest(&3u64.to_be_bytes()));
    }

    #[test]
    fn duplicate_in_dump_is_rejected() {
        let line =
            serde_json::to_string(&AnchorEntry { key: "k".into(), digest: Digest::ZERO, anchored_at: 0 }).unwrap();
        let text = format!("{line}\n{line}\n");
        assert!(matches!(AnchorRegistry::import_jsonl(&text), Err(AnchorError::Dump { line: 2, .. })));
    }
}
