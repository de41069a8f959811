//! PPA creation and integrity, consent contract deployment and queries,
//! treatment-team formation.

mod contract;
mod ppa;
mod team;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use contract::*;
pub use ppa::*;
pub use team::*;

use crate::anchor::{ppa_key, ptt_key, AnchorError, AnchorRegistry, AnchorRelay};
use crate::model::{split_object_id, EnvironmentContext, OperationKind, Role};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConsentError {
    #[error("incomplete PPA: {0}")]
    IncompletePpa(String),
    #[error("PPA contains conflicts: {0}")]
    PpaConflict(String),
    #[error("unknown PPA `{0}`")]
    UnknownPpa(String),
    #[error("PPA `{0}` failed its integrity check")]
    TamperedPpa(String),
    #[error("incomplete informed consent `{consent_id}`: {reason}")]
    IncompleteConsent { consent_id: String, reason: String },
    #[error("consent `{consent_id}` names `{object_id}`, which the patient does not own")]
    ForeignObject { consent_id: String, object_id: String },
    #[error("consent `{0}` is already deployed")]
    AlreadyDeployed(String),
    #[error("`{caller}` does not own consent `{consent_id}`")]
    NotOwner { caller: String, consent_id: String },
    #[error("unknown consent `{0}`")]
    UnknownConsent(String),
    #[error("incomplete PTT: {0}")]
    IncompleteTeam(String),
    #[error("PTT contains conflicts: {0}")]
    TeamConflict(String),
    #[error("unknown PTT `{0}`")]
    UnknownTeam(String),
    #[error(transparent)]
    Anchor(#[from] AnchorError),
}

/// Answers whether an unconditional deny rule forbids a triple. Supplied by
/// the policy engine; the manager passes its own team registry so relation
/// checks can see team membership.
pub trait ConflictOracle {
    fn forbidden_by(
        &self,
        subject_id: &str,
        operation: OperationKind,
        object_id: &str,
        teams: &TeamRegistry,
    ) -> Option<String>;
}

/// Oracle with no deny rules, for use without a policy repository.
pub struct NoPolicies;

impl ConflictOracle for NoPolicies {
    fn forbidden_by(&self, _: &str, _: OperationKind, _: &str, _: &TeamRegistry) -> Option<String> {
        None
    }
}

/// Identifiers the patient's profile accumulates.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatientLinks {
    pub ppa_ids: Vec<String>,
    pub ptt_ids: Vec<String>,
    pub contract_addresses: Vec<String>,
}

#[derive(Debug)]
pub struct ConsentManager {
    registry: Arc<AnchorRegistry>,
    relay: AnchorRelay,
    ppas: BTreeMap<String, PatientProviderAgreement>,
    ledger: ContractLedger,
    teams: TeamRegistry,
    links: BTreeMap<String, PatientLinks>,
}

impl ConsentManager {
    pub fn new(registry: Arc<AnchorRegistry>) -> Self {
        ConsentManager {
            relay: AnchorRelay::new(registry.clone()),
            registry,
            ppas: BTreeMap::new(),
            ledger: ContractLedger::default(),
            teams: TeamRegistry::default(),
            links: BTreeMap::new(),
        }
    }

    pub fn create_ppa(
        &mut self,
        draft: PpaDraft,
        oracle: &dyn ConflictOracle,
        at: u64,
    ) -> Result<&PatientProviderAgreement, ConsentError> {
        let missing = [
            ("PC", draft.pc.as_ref().is_none_or(Vec::is_empty)),
            ("PrC", draft.prc.as_ref().is_none_or(Vec::is_empty)),
            ("ROC", draft.roc.as_ref().is_none_or(Vec::is_empty)),
            ("ICC", draft.icc.as_ref().is_none_or(Vec::is_empty)),
        ];
        let absent: Vec<&str> = missing.iter().filter(|(_, m)| *m).map(|(n, _)| *n).collect();
        if !absent.is_empty() {
            return Err(ConsentError::IncompletePpa(format!("missing {}", absent.join(", "))));
        }
        if draft.valid_from > draft.valid_until {
            return Err(ConsentError::IncompletePpa("valid_from after valid_until".into()));
        }
        let (pc, prc, roc, icc) = (draft.pc.unwrap(), draft.prc.unwrap(), draft.roc.unwrap(), draft.icc.unwrap());

        let links = self.links.entry(draft.patient_id.clone()).or_default();
        let ppa_id = draft.ppa_id.unwrap_or_else(|| format!("PPA-{}-{}", draft.patient_id, links.ppa_ids.len() + 1));
        if self.ppas.contains_key(&ppa_id) {
            return Err(ConsentError::PpaConflict(format!("duplicate ppa id {ppa_id}")));
        }
        let mut ids = BTreeSet::new();
        for c in &icc {
            let taken = self.ppas.values().any(|p| p.icc.iter().any(|o| o.consent_id == c.consent_id));
            if !ids.insert(&c.consent_id) || taken {
                return Err(ConsentError::PpaConflict(format!("duplicate consent id {}", c.consent_id)));
            }
            for u in &c.grantee_subject_ids {
                for op in &c.operations {
                    for o in &c.object_ids {
                        if let Some(policy) = oracle.forbidden_by(u, *op, o, &self.teams) {
                            return Err(ConsentError::PpaConflict(format!(
                                "consent {} grants {u} {op} on {o}, which {policy} forbids",
                                c.consent_id
                            )));
                        }
                    }
                }
            }
        }

        let component_digests = ComponentDigests::compute(&pc, &prc, &roc, &icc);
        let ppa_digest = component_digests.root();
        self.relay.relay_anchor(&ppa_key(&ppa_id), ppa_digest, at)?;
        let ppa = PatientProviderAgreement {
            ppa_id: ppa_id.clone(),
            patient_id: draft.patient_id.clone(),
            pc,
            prc,
            roc,
            icc,
            component_digests,
            ppa_digest,
            valid_from: draft.valid_from,
            valid_until: draft.valid_until,
            status: PpaStatus::Active,
        };
        links.ppa_ids.push(ppa_id.clone());
        Ok(self.ppas.entry(ppa_id).or_insert(ppa))
    }

    pub fn verify_ppa_integrity(&self, ppa_id: &str) -> Result<Integrity, ConsentError> {
        let ppa = self.ppas.get(ppa_id).ok_or_else(|| ConsentError::UnknownPpa(ppa_id.to_string()))?;
        let anchored =
            self.registry.lookup(&ppa_key(ppa_id)).map_err(|_| ConsentError::UnknownPpa(ppa_id.to_string()))?;
        Ok(if ppa.recompute_digest() == anchored { Integrity::Intact } else { Integrity::Tampered })
    }

    /// Deploys each complete consent of an intact PPA. Entries fail
    /// individually; the outer error covers the whole PPA.
    pub fn deploy_consent_contracts(
        &mut self,
        ppa_id: &str,
        seq: u64,
    ) -> Result<Vec<Result<String, ConsentError>>, ConsentError> {
        if self.verify_ppa_integrity(ppa_id)? == Integrity::Tampered {
            return Err(ConsentError::TamperedPpa(ppa_id.to_string()));
        }
        let ppa = &self.ppas[ppa_id];
        let mut results = Vec::new();
        for c in &ppa.icc {
            let outcome = match c.completeness() {
                Err(reason) => Err(ConsentError::IncompleteConsent { consent_id: c.consent_id.clone(), reason }),
                Ok(()) => match c
                    .object_ids
                    .iter()
                    .find(|o| split_object_id(o).map(|(p, _)| p) != Some(ppa.patient_id.as_str()))
                {
                    Some(o) => {
                        Err(ConsentError::ForeignObject { consent_id: c.consent_id.clone(), object_id: o.clone() })
                    }
                    None => {
                        self.ledger.deploy(c.clone(), &ppa.patient_id, ppa_id, (ppa.valid_from, ppa.valid_until), seq)
                    }
                },
            };
            if let Ok(address) = &outcome {
                self.links.entry(ppa.patient_id.clone()).or_default().contract_addresses.push(address.clone());
            }
            results.push(outcome);
        }
        Ok(results)
    }

    /// Live consent query: evaluates at `seq` and consumes on success.
    pub fn query_consent(
        &mut self,
        subject_id: &str,
        operation: OperationKind,
        object_id: &str,
        env: &EnvironmentContext,
        seq: u64,
    ) -> ConsentAnswer {
        self.ledger.query(subject_id, operation, object_id, env, seq)
    }

    pub fn revoke_consent(
        &mut self,
        patient_id: &str,
        consent_id: &str,
        seq: u64,
    ) -> Result<ConsentStatus, ConsentError> {
        self.ledger.revoke(patient_id, consent_id, seq)
    }

    pub fn create_treatment_team(
        &mut self,
        patient_id: &str,
        pools: &BTreeMap<Role, Vec<String>>,
        emergency_contact: Option<&str>,
        seed: u64,
        seq: u64,
        at: u64,
    ) -> Result<&TreatmentTeam, ConsentError> {
        if self.teams.team_of(patient_id).is_some() {
            return Err(ConsentError::TeamConflict(format!("{patient_id} already has a team")));
        }
        let members = draw_members(patient_id, pools, emergency_contact, seed)?;
        let links = self.links.entry(patient_id.to_string()).or_default();
        let ptt_id = format!("PTT-{patient_id}-{}", links.ptt_ids.len() + 1);
        let ptt_digest = TreatmentTeam::compute_digest(&ptt_id, patient_id, &members);
        let team = TreatmentTeam { ptt_id: ptt_id.clone(), patient_id: patient_id.to_string(), members, ptt_digest };
        self.teams.insert(team, seq)?;
        self.relay.relay_anchor(&ptt_key(&ptt_id), ptt_digest, at)?;
        links.ptt_ids.push(ptt_id);
        Ok(self.teams.team_of(patient_id).expect("just inserted"))
    }

    pub fn verify_ptt_integrity(&self, ptt_id: &str) -> Result<Integrity, ConsentError> {
        let team = self.teams.by_id(ptt_id).ok_or_else(|| ConsentError::UnknownTeam(ptt_id.to_string()))?;
        let anchored =
            self.registry.lookup(&ptt_key(ptt_id)).map_err(|_| ConsentError::UnknownTeam(ptt_id.to_string()))?;
        Ok(if team.recompute_digest() == anchored { Integrity::Intact } else { Integrity::Tampered })
    }

    pub fn ppa(&self, ppa_id: &str) -> Option<&PatientProviderAgreement> {
        self.ppas.get(ppa_id)
    }

    /// Direct mutable access to a stored PPA, bypassing every check. Exists
    /// to model tampering with the PPA repository.
    pub fn ppa_mut(&mut self, ppa_id: &str) -> Option<&mut PatientProviderAgreement> {
        self.ppas.get_mut(ppa_id)
    }

    /// Same as [`Self::ppa_mut`] for the team registry.
    pub fn team_mut(&mut self, ptt_id: &str) -> Option<&mut TreatmentTeam> {
        self.teams.by_id_mut(ptt_id)
    }

    pub fn ppas(&self) -> impl Iterator<Item = &PatientProviderAgreement> {
        self.ppas.values()
    }

    pub fn ledger(&self) -> &ContractLedger {
        &self.ledger
    }

    pub fn teams(&self) -> &TeamRegistry {
        &self.teams
    }

    pub fn links(&self, patient_id: &str) -> Option<&PatientLinks> {
        self.links.get(patient_id)
    }
}
