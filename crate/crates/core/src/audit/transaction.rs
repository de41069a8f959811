//! One recorded access.

use serde::{Deserialize, Serialize};

use crate::model::{
    self, AccessElements, Canonical, ConditionsSnapshot, ObjectId, OperationKind, Signature, VerifyingKey,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ComplianceStatus {
    Pending,
    Compliant,
    Noncompliant,
    NotDetermined,
}

impl ComplianceStatus {
    pub fn is_terminal(self) -> bool {
        self != ComplianceStatus::Pending
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditTransaction {
    /// Logical stamp of the request that produced this record.
    pub tx_id: u64,
    pub subject_id: String,
    pub operation: OperationKind,
    pub object_id: ObjectId,
    pub conditions_snapshot: Option<ConditionsSnapshot>,
    pub timestamp: u64,
    pub compliance_status: ComplianceStatus,
    pub submitter_signature: Signature,
}

impl AuditTransaction {
    pub fn from_elements(tx_id: u64, elements: AccessElements, signature: Signature) -> Self {
        AuditTransaction {
            tx_id,
            subject_id: elements.subject_id,
            operation: elements.operation,
            object_id: elements.object_id,
            conditions_snapshot: elements.conditions_snapshot,
            timestamp: elements.timestamp,
            compliance_status: ComplianceStatus::Pending,
            submitter_signature: signature,
        }
    }

    pub fn elements(&self) -> AccessElements {
        AccessElements {
            subject_id: self.subject_id.clone(),
            operation: self.operation,
            object_id: self.object_id.clone(),
            conditions_snapshot: self.conditions_snapshot.clone(),
            timestamp: self.timestamp,
        }
    }

    pub fn verify_signature(&self, key: &VerifyingKey) -> bool {
        model::verify(key, &self.elements().canonical_bytes(), &self.submitter_signature)
    }

    /// Byte equality of everything except the compliance status.
    pub fn same_elements(&self, other: &AuditTransaction) -> bool {
        self.tx_id == other.tx_id
            && self.submitter_signature == other.submitter_signature
            && self.elements().canonical_bytes() == other.elements().canonical_bytes()
    }
}
