//! Blind integrity verifier for a subject's own audit trails.
//!
//! The verifier recomputes the stored block, compares its hash with the
//! anchored digest, and checks the claimed transaction against the copy in
//! the block. Answers carry only the requester's tx ids and a status.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::anchor::{audit_key, ppa_key, ptt_key, AnchorError, AnchorRegistry};
use crate::audit::{AuditBlock, AuditTransaction};
use crate::consent::{ConsentManager, Integrity, TreatmentTeam};
use crate::model::{Canonical, Digest};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VerifyError {
    #[error("`{requester}` cannot verify transaction {tx_id}, which belongs to another subject")]
    NotOwnTrail { requester: String, tx_id: u64 },
    #[error("no block at height {0}")]
    UnknownBlock(u64),
    #[error("unknown id `{0}`")]
    UnknownId(String),
    #[error(transparent)]
    Anchor(#[from] AnchorError),
}

/// A trail entry the requester holds, with the height it was sealed at.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub height: u64,
    pub transaction: AuditTransaction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TrailStatus {
    NotModified,
    Modified,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntryResult {
    pub tx_id: u64,
    pub height: u64,
    pub status: TrailStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub subject_id: String,
    pub entries: Vec<EntryResult>,
    pub overall: TrailStatus,
}

impl VerificationReport {
    pub fn modified_heights(&self) -> Vec<u64> {
        let mut h: Vec<u64> =
            self.entries.iter().filter(|e| e.status == TrailStatus::Modified).map(|e| e.height).collect();
        h.dedup();
        h
    }
}

/// Stored block that passed its own checks and matches its anchor.
fn anchored_block(bytes: &[u8], anchored: Option<Digest>) -> Option<AuditBlock> {
    let block = AuditBlock::check_stored(bytes).ok()?;
    (anchored == Some(block.block_hash)).then_some(block)
}

fn entry_status(block: Option<&AuditBlock>, claim: &AuditTransaction) -> TrailStatus {
    let claimed = claim.canonical_bytes();
    match block.and_then(|b| b.transactions.iter().find(|t| t.tx_id == claim.tx_id)) {
        Some(t) if t.canonical_bytes() == claimed => TrailStatus::NotModified,
        _ => TrailStatus::Modified,
    }
}

/// Checks every claim. Ownership and block existence are checked for all
/// claims before any hashing, so a rejected request reveals nothing.
pub fn verify_trails(
    blocks: &[Vec<u8>],
    registry: &AnchorRegistry,
    requester: &str,
    claims: &[Claim],
) -> Result<VerificationReport, VerifyError> {
    for c in claims {
        if c.transaction.subject_id != requester {
            return Err(VerifyError::NotOwnTrail { requester: requester.to_string(), tx_id: c.transaction.tx_id });
        }
        if c.height as usize >= blocks.len() {
            return Err(VerifyError::UnknownBlock(c.height));
        }
    }
    let mut checked: BTreeMap<u64, Option<AuditBlock>> = BTreeMap::new();
    let mut entries = Vec::with_capacity(claims.len());
    for c in claims {
        let block = checked
            .entry(c.height)
            .or_insert_with(|| anchored_block(&blocks[c.height as usize], registry.lookup(&audit_key(c.height)).ok()));
        entries.push(EntryResult {
            tx_id: c.transaction.tx_id,
            height: c.height,
            status: entry_status(block.as_ref(), &c.transaction),
        });
    }
    let overall = if entries.iter().all(|e| e.status == TrailStatus::NotModified) {
        TrailStatus::NotModified
    } else {
        TrailStatus::Modified
    };
    Ok(VerificationReport { subject_id: requester.to_string(), entries, overall })
}

/// Compares a PPA's recomputed digest with its anchor.
pub fn verify_ppa_anchor(
    consents: &ConsentManager,
    registry: &AnchorRegistry,
    ppa_id: &str,
) -> Result<Integrity, VerifyError> {
    let anchored = registry.lookup(&ppa_key(ppa_id))?;
    let ppa = consents.ppa(ppa_id).ok_or_else(|| VerifyError::UnknownId(ppa_id.to_string()))?;
    Ok(if ppa.recompute_digest() == anchored { Integrity::Intact } else { Integrity::Tampered })
}

pub fn verify_ptt_anchor(team: &TreatmentTeam, registry: &AnchorRegistry) -> Result<Integrity, VerifyError> {
    let anchored = registry.lookup(&ptt_key(&team.ptt_id))?;
    Ok(if team.recompute_digest() == anchored { Integrity::Intact } else { Integrity::Tampered })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchor::AnchorRelay;
    use crate::audit::{AuditChain, ChainConfig, ComplianceStatus};
    use crate::model::{keypair_for, AccessRequest, EnvironmentContext, OperationKind};
    use std::sync::Arc;

    fn sealed(subjects: &[&str]) -> (AuditChain, Arc<AnchorRegistry>) {
        let reg = AnchorRegistry::new();
        let mut chain = AuditChain::new(ChainConfig::default(), AnchorRelay::new(reg.clone())).unwrap();
        for (i, s) in subjects.iter().enumerate() {
            let (sk, pk) = keypair_for(s);
            let env = EnvironmentContext::at(1_709_542_800 + i as u64, "WARD-A", "10.0.0.1", false);
            let req = AccessRequest::signed(&sk, s, OperationKind::Read, "PT1001/HR1005", env, Default::default());
            let tx = AuditTransaction::from_elements(i as u64 + 1, req.elements(), req.signature);
            chain.submit(tx, &pk, 0).unwrap();
            chain.set_status(i as u64 + 1, ComplianceStatus::Compliant).unwrap();
        }
        chain.flush().unwrap();
        (chain, reg)
    }

    fn claims_of(chain: &AuditChain, subject: &str) -> Vec<Claim> {
        (0..chain.len() as u64)
            .flat_map(|h| {
                chain.block(h).unwrap().transactions.into_iter().map(move |t| Claim { height: h, transaction: t })
            })
            .filter(|c| c.transaction.subject_id == subject)
            .collect()
    }

    #[test]
    fn genuine_entries_are_not_modified() {
        let (chain, reg) = sealed(&["PT1001", "PR1002", "PT1001"]);
        let r = verify_trails(chain.raw_blocks(), &reg, "PT1001", &claims_of(&chain, "PT1001")).unwrap();
        assert_eq!(r.entries.len(), 2);
        assert_eq!(r.overall, TrailStatus::NotModified);
    }

    #[test]
    fn bit_flip_after_anchoring_is_modified() {
        let (mut chain, reg) = sealed(&["PT1001"; 12]);
        let claims = claims_of(&chain, "PT1001");
        chain.tamper_bit(1, 40, 3).unwrap();
        let r = verify_trails(chain.raw_blocks(), &reg, "PT1001", &claims).unwrap();
        assert_eq!(r.overall, TrailStatus::Modified);
        assert_eq!(r.modified_heights(), vec![1]);
    }

    #[test]
    fn altered_claim_is_modified() {
        let (chain, reg) = sealed(&["PT1001"]);
        let mut claims = claims_of(&chain, "PT1001");
        claims[0].transaction.compliance_status = ComplianceStatus::Noncompliant;
        let r = verify_trails(chain.raw_blocks(), &reg, "PT1001", &claims).unwrap();
        assert_eq!(r.overall, TrailStatus::Modified);
    }

    #[test]
    fn foreign_claims_are_refused() {
        let (chain, reg) = sealed(&["PT1001", "PR1002"]);
        let claims = claims_of(&chain, "PR1002");
        let err = verify_trails(chain.raw_blocks(), &reg, "PT1001", &claims).unwrap_err();
        assert!(matches!(err, VerifyError::NotOwnTrail { .. }));
    }

    #[test]
    fn unknown_block() {
        let (chain, reg) = sealed(&["PT1001"]);
        let mut claims = claims_of(&chain, "PT1001");
        claims[0].height = 7;
        assert_eq!(verify_trails(chain.raw_blocks(), &reg, "PT1001", &claims), Err(VerifyError::UnknownBlock(7)));
    }

    #[test]
    fn spliced_block_is_caught_by_anchor() {
        let (mut chain, reg) = sealed(&["PT1001"; 10]);
        let claims = claims_of(&chain, "PT1001");
        let mut block = chain.block(0).unwrap();
        block.timestamp += 1;
        block.block_hash = block.compute_hash();
        chain.replace_block(0, block.canonical_bytes()).unwrap();
        // Internally consistent only up to the broken link at height 1.
        assert_eq!(chain.check().first_bad(), Some(1));
        let r = verify_trails(chain.raw_blocks(), &reg, "PT1001", &claims[..1]).unwrap();
        assert_eq!(r.overall, TrailStatus::Modified);
    }
}
