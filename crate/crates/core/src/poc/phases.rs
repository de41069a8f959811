//! The four phases as standalone functions. The network in
//! [`super::network`] drives the same functions from node message handlers.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::auditor::{Auditor, Vote};
use crate::audit::{AuditChain, AuditTransaction, ComplianceStatus};
use crate::model::{Canonical, VerifyingKey};
use crate::policy::ComplianceSnapshot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Ordering {
    /// Arrival order.
    #[default]
    Fifo,
    /// Emergency accesses first, otherwise arrival order.
    Priority,
    /// Smallest encoded transaction first, otherwise arrival order.
    Size,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplianceVerdict {
    pub tx_id: u64,
    pub votes: BTreeMap<String, Vote>,
    #[serde(rename = "final")]
    pub final_status: ComplianceStatus,
}

/// Strict majority of `k` auditors, or at least `quorum` when given. Silent
/// auditors count toward `k` but vote for nothing.
pub fn aggregate(votes: &BTreeMap<String, Vote>, k: usize, quorum: usize) -> ComplianceStatus {
    let yes = votes.values().filter(|v| **v == Vote::Compliant).count();
    let no = votes.values().filter(|v| **v == Vote::Noncompliant).count();
    let needed = quorum.max(k / 2 + 1);
    if yes >= needed {
        ComplianceStatus::Compliant
    } else if no >= needed {
        ComplianceStatus::Noncompliant
    } else {
        ComplianceStatus::NotDetermined
    }
}

/// Phase 1: signature check against the submitter's registered key as of
/// the request's stamp, then ordering.
pub fn phase1_order(
    batch: Vec<AuditTransaction>,
    key_of: impl Fn(&str, u64) -> Option<VerifyingKey>,
    ordering: Ordering,
) -> (Vec<AuditTransaction>, Vec<(AuditTransaction, String)>) {
    let mut valid = Vec::new();
    let mut invalid = Vec::new();
    for tx in batch {
        match key_of(&tx.subject_id, tx.tx_id) {
            None => invalid.push((tx, "unknown submitter".to_string())),
            Some(k) if !tx.verify_signature(&k) => invalid.push((tx, "signature does not match submitter key".into())),
            Some(_) => valid.push(tx),
        }
    }
    match ordering {
        Ordering::Fifo => {}
        Ordering::Priority => {
            valid.sort_by_key(|t| !t.conditions_snapshot.as_ref().is_some_and(|s| s.environment.emergency_flag))
        }
        Ordering::Size => valid.sort_by_key(|t| t.canonical_bytes().len()),
    }
    (valid, invalid)
}

/// Structural checks a validator applies to one transaction.
pub fn validate_tx(tx: &AuditTransaction, snapshot: &ComplianceSnapshot) -> Result<(), String> {
    let Some(s) = &tx.conditions_snapshot else {
        return Err("malformed: missing conditions snapshot".into());
    };
    if tx.compliance_status != ComplianceStatus::Pending {
        return Err("malformed: status already set".into());
    }
    if tx.timestamp != s.environment.wall_clock {
        return Err("malformed: timestamp differs from environment clock".into());
    }
    if !s.environment.is_consistent() {
        return Err("malformed: environment date fields disagree with clock".into());
    }
    if snapshot.ar.subject(&tx.subject_id, tx.tx_id).is_none() {
        return Err(format!("unknown subject {}", tx.subject_id));
    }
    if snapshot.ar.object(&tx.object_id, tx.tx_id).is_none() {
        return Err(format!("unknown object {}", tx.object_id));
    }
    Ok(())
}

/// Phase 2 over a whole batch.
pub fn phase2_validate(
    ordered: Vec<AuditTransaction>,
    snapshot: &ComplianceSnapshot,
) -> (Vec<AuditTransaction>, Vec<(AuditTransaction, String)>) {
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for tx in ordered {
        match validate_tx(&tx, snapshot) {
            Ok(()) => accepted.push(tx),
            Err(reason) => rejected.push((tx, reason)),
        }
    }
    (accepted, rejected)
}

/// Phase 3: every auditor votes independently; votes are aggregated.
pub fn phase3_audit(accepted: &[AuditTransaction], auditors: &[Auditor], quorum: usize) -> Vec<ComplianceVerdict> {
    accepted
        .iter()
        .map(|tx| {
            let votes: BTreeMap<String, Vote> =
                auditors.iter().filter_map(|a| a.vote(tx).map(|v| (a.id.clone(), v))).collect();
            ComplianceVerdict { tx_id: tx.tx_id, final_status: aggregate(&votes, auditors.len(), quorum), votes }
        })
        .collect()
}

/// Why a transaction left the pipeline without being committed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DroppedTx {
    pub tx_id: u64,
    pub phase: String,
    pub reason: String,
}

/// Phase 4: the candidate must carry the same five elements as the
/// reference copy taken at ordering; then it is pooled with its status.
pub fn phase4_commit(
    reference: &AuditTransaction,
    candidate: &AuditTransaction,
    status: ComplianceStatus,
    key: &VerifyingKey,
    chain: &mut AuditChain,
    at: u64,
) -> Result<(), DroppedTx> {
    let drop = |reason: String| DroppedTx { tx_id: reference.tx_id, phase: "COMMIT".into(), reason };
    if !reference.same_elements(candidate) {
        return Err(drop("ElementsMutated".into()));
    }
    let mut tx = reference.clone();
    tx.compliance_status = ComplianceStatus::Pending;
    chain.submit(tx, key, at).map_err(|e| drop(e.to_string()))?;
    chain.set_status(reference.tx_id, status).map_err(|e| drop(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn votes(yes: usize, no: usize) -> BTreeMap<String, Vote> {
        (0..yes)
            .map(|i| (format!("Y{i}"), Vote::Compliant))
            .chain((0..no).map(|i| (format!("N{i}"), Vote::Noncompliant)))
            .collect()
    }

    #[test]
    fn strict_majority() {
        assert_eq!(aggregate(&votes(3, 2), 5, 0), ComplianceStatus::Compliant);
        assert_eq!(aggregate(&votes(2, 3), 5, 0), ComplianceStatus::Noncompliant);
        assert_eq!(aggregate(&votes(2, 2), 4, 0), ComplianceStatus::NotDetermined);
        // Two silent auditors out of five: two votes are not a majority.
        assert_eq!(aggregate(&votes(2, 1), 5, 0), ComplianceStatus::NotDetermined);
        assert_eq!(aggregate(&votes(1, 0), 1, 0), ComplianceStatus::Compliant);
    }

    #[test]
    fn higher_quorum_is_respected() {
        assert_eq!(aggregate(&votes(3, 2), 5, 4), ComplianceStatus::NotDetermined);
        assert_eq!(aggregate(&votes(4, 1), 5, 4), ComplianceStatus::Compliant);
    }

    #[test]
    fn empty_batch() {
        let (v, i) = phase1_order(vec![], |_, _| None, Ordering::Fifo);
        assert!(v.is_empty() && i.is_empty());
    }
}
