//! Auditor nodes. An auditor sees the five recorded elements and an
//! immutable policy/attribute snapshot; nothing in this module can reach
//! record contents.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::audit::AuditTransaction;
use crate::policy::ComplianceSnapshot;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Vote {
    Compliant,
    Noncompliant,
}

impl Vote {
    fn inverted(self) -> Vote {
        match self {
            Vote::Compliant => Vote::Noncompliant,
            Vote::Noncompliant => Vote::Compliant,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Behaviour {
    Honest,
    /// Votes the opposite of its evaluation.
    Byzantine,
    /// Never answers.
    Crashed,
}

#[derive(Debug, Clone)]
pub struct Auditor {
    pub id: String,
    pub behaviour: Behaviour,
    snapshot: Arc<ComplianceSnapshot>,
}

impl Auditor {
    pub fn new(id: impl Into<String>, behaviour: Behaviour, snapshot: Arc<ComplianceSnapshot>) -> Self {
        Auditor { id: id.into(), behaviour, snapshot }
    }

    /// Re-runs the decision for the recorded access as of its stamp.
    pub fn evaluate(&self, tx: &AuditTransaction) -> Vote {
        if self.snapshot.decide(tx.tx_id, &tx.elements()).is_permit() {
            Vote::Compliant
        } else {
            Vote::Noncompliant
        }
    }

    pub fn vote(&self, tx: &AuditTransaction) -> Option<Vote> {
        match self.behaviour {
            Behaviour::Honest => Some(self.evaluate(tx)),
            Behaviour::Byzantine => Some(self.evaluate(tx).inverted()),
            Behaviour::Crashed => None,
        }
    }
}
