//! Patient-provider agreements and their component digest tree.

use std::collections::BTreeSet;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::model::{self, Canonical, Condition, Digest, ObjectId, OperationKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PcKind {
    Personal,
    Contact,
    Mailing,
    Pharmacy,
    BillingInsurance,
    EmergencyContact,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientComponent {
    pub kind: PcKind,
    pub value: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PrcKind {
    TreatmentTeam,
    AnonymousResearch,
    Prescription,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderComponent {
    pub kind: PrcKind,
    pub value: String,
}

/// The consent terms `(U, O, OP, CON)`. Deployment state such as status and
/// usage counters lives on the contract, so it never disturbs the PPA digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InformedConsent {
    pub consent_id: String,
    #[serde(default)]
    pub grantee_subject_ids: BTreeSet<String>,
    #[serde(default)]
    pub object_ids: BTreeSet<ObjectId>,
    #[serde(default)]
    pub operations: BTreeSet<OperationKind>,
    #[serde(default)]
    pub conditions: Vec<Condition>,
}

impl InformedConsent {
    pub fn completeness(&self) -> Result<(), String> {
        if self.grantee_subject_ids.is_empty() {
            return Err("no grantees".into());
        }
        if self.object_ids.is_empty() {
            return Err("no objects".into());
        }
        if self.operations.is_empty() {
            return Err("no operations".into());
        }
        for c in &self.conditions {
            c.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PpaStatus {
    Active,
    Expired,
    Revoked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentDigests {
    pub h_pc: Digest,
    pub h_prc: Digest,
    pub h_roc: Digest,
    pub h_icc: Digest,
}

impl ComponentDigests {
    pub fn compute(
        pc: &[PatientComponent],
        prc: &[ProviderComponent],
        roc: &[String],
        icc: &[InformedConsent],
    ) -> Self {
        ComponentDigests {
            h_pc: model::digest(&pc.canonical_bytes()),
            h_prc: model::digest(&prc.canonical_bytes()),
            h_roc: model::digest(&roc.canonical_bytes()),
            h_icc: model::digest(&icc.canonical_bytes()),
        }
    }

    /// `digest(h_pc || h_prc || h_roc || h_icc)`
    pub fn root(&self) -> Digest {
        model::digest_concat([
            self.h_pc.as_bytes().as_slice(),
            self.h_prc.as_bytes(),
            self.h_roc.as_bytes(),
            self.h_icc.as_bytes(),
        ])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientProviderAgreement {
    pub ppa_id: String,
    pub patient_id: String,
    pub pc: Vec<PatientComponent>,
    pub prc: Vec<ProviderComponent>,
    pub roc: Vec<String>,
    pub icc: Vec<InformedConsent>,
    pub component_digests: ComponentDigests,
    pub ppa_digest: Digest,
    pub valid_from: NaiveDate,
    pub valid_until: NaiveDate,
    pub status: PpaStatus,
}

impl PatientProviderAgreement {
    /// Digest recomputed from the stored components, ignoring the cached
    /// digest fields.
    pub fn recompute_digest(&self) -> Digest {
        ComponentDigests::compute(&self.pc, &self.prc, &self.roc, &self.icc).root()
    }
}

/// Input to PPA creation. Any missing group makes the agreement incomplete.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PpaDraft {
    #[serde(default)]
    pub ppa_id: Option<String>,
    pub patient_id: String,
    #[serde(default)]
    pub pc: Option<Vec<PatientComponent>>,
    #[serde(default)]
    pub prc: Option<Vec<ProviderComponent>>,
    #[serde(default)]
    pub roc: Option<Vec<String>>,
    #[serde(default)]
    pub icc: Option<Vec<InformedConsent>>,
    pub valid_from: NaiveDate,
    pub valid_until: NaiveDate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Integrity {
    Intact,
    Tampered,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn root_is_digest_of_concatenated_components() {
        let pc = vec![PatientComponent { kind: PcKind::Personal, value: "Jordan".into() }];
        let prc = vec![ProviderComponent { kind: PrcKind::TreatmentTeam, value: "PTT-PT1001-1".into() }];
        let roc = vec!["HIPAA".to_string()];
        let icc: Vec<InformedConsent> = vec![];
        let cd = ComponentDigests::compute(&pc, &prc, &roc, &icc);
        let mut flat = Vec::new();
        for h in [cd.h_pc, cd.h_prc, cd.h_roc, cd.h_icc] {
            flat.extend_from_slice(h.as_bytes());
        }
        assert_eq!(cd.root(), model::digest(&flat));
    }

    #[test]
    fn consent_completeness() {
        let mut c = InformedConsent {
            consent_id: "C1".into(),
            grantee_subject_ids: ["PR1001".to_string()].into(),
            object_ids: ["PT1001/HR1005".to_string()].into(),
            operations: BTreeSet::new(),
            conditions: vec![],
        };
        assert_eq!(c.completeness(), Err("no operations".into()));
        c.operations.insert(OperationKind::Read);
        assert!(c.completeness().is_ok());
        c.conditions.push(Condition::AccessFrequencyLimit { max: 0 });
        assert!(c.completeness().is_err());
    }

    #[test]
    fn draft_json_missing_group_is_none() {
        let d: PpaDraft = serde_json::from_str(
            r#"{"patient_id":"PT1001","pc":[],"valid_from":"2024-01-01","valid_until":"2025-01-01"}"#,
        )
        .unwrap();
        assert!(d.icc.is_none());
        assert_eq!(d.pc, Some(vec![]));
    }
}
