//! Administration, information, decision and enforcement points around the
//! shared repositories.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::decision::{apply_consent, AttributeBundle, DecisionView, PolicyOutcome};
use super::repository::{AttributeRepository, ObjectEntry, PolicyRepository};
use super::rules::Policy;
use super::PolicyError;
use crate::anchor::{AnchorRegistry, AnchorRelay, Receipt};
use crate::audit::AuditTransaction;
use crate::consent::{
    ConflictOracle, ConsentError, ConsentManager, ConsentStatus, ContractLedger, PatientProviderAgreement, PpaDraft,
    TeamRegistry, TreatmentTeam,
};
use crate::model::{
    self, AccessDecision, AccessElements, AccessRequest, Canonical, EnvironmentContext, HealthRecordDescriptor,
    ObjectId, Obligation, OperationKind, Role, SubjectProfile, Verdict,
};

/// Payloads accepted by the administration point.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Registration {
    Subject(SubjectProfile),
    Record(HealthRecordDescriptor),
    AuditTrail,
    Policy(Policy),
}

impl Registration {
    fn key(&self) -> (&'static str, String) {
        match self {
            Registration::Subject(s) => ("subject", s.subject_id.clone()),
            Registration::Record(r) => ("object", r.object_id()),
            Registration::AuditTrail => ("object", model::AUDIT_TRAIL_OBJECT.to_string()),
            Registration::Policy(p) => ("policy", p.policy_id.clone()),
        }
    }

    fn validate(&self) -> Result<(), String> {
        match self {
            Registration::Subject(s) => s.validate(),
            Registration::Record(r) => r.validate(),
            Registration::AuditTrail => Ok(()),
            Registration::Policy(p) => p.validate(),
        }
    }
}

/// One entry of the policy-contract audit trail: everything the
/// administration side did, plus emitted notifications.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PcatEvent {
    pub seq: u64,
    pub at: u64,
    pub kind: String,
    pub detail: String,
}

/// Outcome of one enforcement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Enforcement {
    pub tx_id: u64,
    pub decision: AccessDecision,
    pub payload: Option<String>,
    pub transaction: AuditTransaction,
}

/// Single gate to record contents. Only the enforcement point holds one.
#[derive(Debug, Clone, Default)]
pub struct ResourceAccessPoint {
    payloads: BTreeMap<ObjectId, String>,
}

impl ResourceAccessPoint {
    fn store(&mut self, record: &HealthRecordDescriptor) {
        let body = format!("{} of {} [{}]", record.record_name, record.owner_patient_id, record.sensitivity_class);
        self.payloads.insert(record.object_id(), body);
    }

    fn fetch(&self, object_id: &str) -> Option<String> {
        self.payloads.get(object_id).cloned()
    }
}

/// Immutable copy of everything a decision depends on, including history.
/// Auditors evaluate against this; it has no access to record payloads.
#[derive(Debug, Clone)]
pub struct ComplianceSnapshot {
    pub ar: AttributeRepository,
    pub pcr: PolicyRepository,
    pub teams: TeamRegistry,
    pub ledger: ContractLedger,
}

impl ComplianceSnapshot {
    pub fn view(&self, as_of: u64) -> DecisionView<'_> {
        DecisionView { ar: &self.ar, pcr: &self.pcr, teams: &self.teams, as_of }
    }

    /// Decision the live engine made (or should have made) for the request
    /// stamped `tx_id`.
    pub fn decide(&self, tx_id: u64, elements: &AccessElements) -> AccessDecision {
        self.view(tx_id).decide(&self.ledger, elements)
    }

    pub fn subject_key(&self, subject_id: &str, as_of: u64) -> Option<model::VerifyingKey> {
        self.ar.subject(subject_id, as_of).map(|s| s.public_key)
    }
}

struct PolicyConflicts<'a> {
    ar: &'a AttributeRepository,
    pcr: &'a PolicyRepository,
    as_of: u64,
}

impl ConflictOracle for PolicyConflicts<'_> {
    fn forbidden_by(
        &self,
        subject_id: &str,
        op: OperationKind,
        object_id: &str,
        teams: &TeamRegistry,
    ) -> Option<String> {
        DecisionView { ar: self.ar, pcr: self.pcr, teams, as_of: self.as_of }.forbidden_by(subject_id, op, object_id)
    }
}

#[derive(Debug)]
pub struct PolicyEngine {
    relay: AnchorRelay,
    seq: u64,
    now: u64,
    ar: AttributeRepository,
    pcr: PolicyRepository,
    consents: ConsentManager,
    rap: ResourceAccessPoint,
    pcat: Vec<PcatEvent>,
    outbound: Vec<AuditTransaction>,
}

impl PolicyEngine {
    pub fn new(registry: Arc<AnchorRegistry>) -> Self {
        PolicyEngine {
            relay: AnchorRelay::new(registry.clone()),
            seq: 0,
            now: 0,
            ar: AttributeRepository::default(),
            pcr: PolicyRepository::default(),
            consents: ConsentManager::new(registry),
            rap: ResourceAccessPoint::default(),
            pcat: Vec::new(),
            outbound: Vec::new(),
        }
    }

    /// Advances the logical stamp. Every state change and request takes one.
    fn stamp(&mut self) -> u64 {
        self.seq += 1;
        self.seq
    }

    pub fn current_seq(&self) -> u64 {
        self.seq
    }

    /// Sets the simulated wall clock used for anchors and PCAT entries.
    pub fn set_time(&mut self, now: u64) {
        self.now = self.now.max(now);
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    fn record(&mut self, seq: u64, kind: &str, detail: String) {
        self.pcat.push(PcatEvent { seq, at: self.now, kind: kind.to_string(), detail });
    }

    fn view(&self, as_of: u64) -> DecisionView<'_> {
        DecisionView { ar: &self.ar, pcr: &self.pcr, teams: self.consents.teams(), as_of }
    }

    fn store(&mut self, reg: Registration, update: bool) -> Result<Receipt, PolicyError> {
        reg.validate().map_err(PolicyError::SchemaViolation)?;
        let (kind, id) = reg.key();
        let exists = match &reg {
            Registration::Policy(_) => self.pcr.policies.contains(&id),
            Registration::Subject(_) => self.ar.subjects.contains(&id),
            _ => self.ar.objects.contains(&id),
        };
        match (exists, update) {
            (true, false) => return Err(PolicyError::DuplicateId(id)),
            (false, true) => return Err(PolicyError::UnknownId(id)),
            _ => {}
        }
        let digest = match &reg {
            Registration::Subject(s) => model::digest(&s.canonical_bytes()),
            Registration::Record(r) => model::digest(&ObjectEntry::HealthRecord(r.clone()).canonical_bytes()),
            Registration::AuditTrail => model::digest(&ObjectEntry::AuditTrail.canonical_bytes()),
            Registration::Policy(p) => model::digest(&p.canonical_bytes()),
        };
        let seq = self.stamp();
        let version = match reg {
            Registration::Subject(s) => self.ar.subjects.push(&id, seq, s),
            Registration::Record(r) => {
                self.rap.store(&r);
                self.ar.objects.push(&id, seq, ObjectEntry::HealthRecord(r))
            }
            Registration::AuditTrail => self.ar.objects.push(&id, seq, ObjectEntry::AuditTrail),
            Registration::Policy(p) => self.pcr.policies.push(&id, seq, p),
        };
        let receipt = self.relay.relay_anchor(&format!("{kind}:{id}@{version}"), digest, self.now)?;
        let verb = if update { "PCAP_UPDATE" } else { "PCAP_REGISTER" };
        self.record(seq, verb, format!("{kind} {id} v{version}"));
        Ok(receipt)
    }

    pub fn pcap_register(&mut self, reg: Registration) -> Result<Receipt, PolicyError> {
        self.store(reg, false)
    }

    /// Stores a new version of an existing entity.
    pub fn pcap_update(&mut self, reg: Registration) -> Result<Receipt, PolicyError> {
        self.store(reg, true)
    }

    pub fn pcip_fetch(
        &self,
        subject_id: &str,
        object_id: &str,
        env: &EnvironmentContext,
    ) -> Result<AttributeBundle, PolicyError> {
        let as_of = self.seq + 1;
        if self.ar.subject(subject_id, as_of).is_none() {
            return Err(PolicyError::UnknownSubject(subject_id.to_string()));
        }
        if self.ar.object(object_id, as_of).is_none() {
            return Err(PolicyError::UnknownObject(object_id.to_string()));
        }
        Ok(self.view(as_of).fetch(subject_id, object_id, env).expect("both ids checked"))
    }

    fn decide_at(&mut self, seq: u64, elements: &AccessElements) -> AccessDecision {
        match self.view(seq).evaluate_policies(elements) {
            PolicyOutcome::Decided(d) => d,
            PolicyOutcome::ConsentRequired(d) => {
                let env = &elements.conditions_snapshot.as_ref().expect("evaluated above").environment;
                let answer = self.consents.query_consent(
                    &elements.subject_id,
                    elements.operation,
                    &elements.object_id,
                    env,
                    seq,
                );
                apply_consent(d, &answer)
            }
        }
    }

    /// Decision only. Consumes consent usage on a permit but emits no audit
    /// record; callers that need the record go through [`Self::pcep_enforce`].
    pub fn pcdp_decide(&mut self, request: &AccessRequest) -> AccessDecision {
        let seq = self.stamp();
        self.decide_at(seq, &request.elements())
    }

    /// Ingress point. Always emits exactly one audit transaction.
    pub fn pcep_enforce(&mut self, request: &AccessRequest) -> Enforcement {
        let seq = self.stamp();
        self.set_time(request.environment.wall_clock);
        let elements = request.elements();
        let decision = match self.ar.subject(&request.subject_id, seq) {
            None => AccessDecision::deny(format!("unknown subject {}", request.subject_id)),
            Some(s) if !request.verify(&s.public_key) => AccessDecision::deny("signature verification failed"),
            Some(_) => self.decide_at(seq, &elements),
        };
        let payload = match decision.verdict {
            Verdict::Permit => self.rap.fetch(&request.object_id),
            Verdict::Deny => None,
        };
        for o in &decision.obligations {
            self.record(seq, "NOTIFY", notification_text(o, request));
        }
        let transaction = AuditTransaction::from_elements(seq, elements, request.signature);
        self.outbound.push(transaction.clone());
        Enforcement { tx_id: seq, decision, payload, transaction }
    }

    /// Takes the audit transactions emitted since the last call.
    pub fn drain_audit(&mut self) -> Vec<AuditTransaction> {
        std::mem::take(&mut self.outbound)
    }

    pub fn create_ppa(&mut self, draft: PpaDraft) -> Result<PatientProviderAgreement, PolicyError> {
        let seq = self.stamp();
        let oracle = PolicyConflicts { ar: &self.ar, pcr: &self.pcr, as_of: seq };
        let ppa = self.consents.create_ppa(draft, &oracle, self.now)?.clone();
        self.record(seq, "PPA_CREATED", format!("{} for {} digest {}", ppa.ppa_id, ppa.patient_id, ppa.ppa_digest));
        Ok(ppa)
    }

    pub fn deploy_consents(&mut self, ppa_id: &str) -> Result<Vec<Result<String, ConsentError>>, PolicyError> {
        let seq = self.stamp();
        let results = self.consents.deploy_consent_contracts(ppa_id, seq)?;
        for r in &results {
            let detail = match r {
                Ok(address) => format!("{ppa_id} contract {address}"),
                Err(e) => format!("{ppa_id} rejected: {e}"),
            };
            self.record(seq, "CONSENT_DEPLOY", detail);
        }
        Ok(results)
    }

    pub fn revoke_consent(&mut self, patient_id: &str, consent_id: &str) -> Result<ConsentStatus, PolicyError> {
        let seq = self.stamp();
        let status = self.consents.revoke_consent(patient_id, consent_id, seq)?;
        self.record(seq, "CONSENT_REVOKED", format!("{consent_id} by {patient_id}"));
        Ok(status)
    }

    /// Candidate pools for each selectable team role, from the repository.
    pub fn team_pools(&self) -> BTreeMap<Role, Vec<String>> {
        Role::TEAM
            .iter()
            .filter(|r| **r != Role::Emc)
            .map(|r| (*r, self.ar.subjects_with_role(*r, self.seq + 1)))
            .collect()
    }

    pub fn create_team(&mut self, patient_id: &str, seed: u64) -> Result<TreatmentTeam, PolicyError> {
        let seq = self.stamp();
        if self.ar.subject(patient_id, seq).map(|s| s.role) != Some(Role::Patient) {
            return Err(PolicyError::UnknownSubject(patient_id.to_string()));
        }
        let pools = self.team_pools();
        let ec = self.ar.emergency_contact_of(patient_id, seq).map(|s| s.subject_id.clone());
        let team = self.consents.create_treatment_team(patient_id, &pools, ec.as_deref(), seed, seq, self.now)?.clone();
        let roster: Vec<String> = team.members.iter().map(|(r, s)| format!("{r}={s}")).collect();
        self.record(seq, "TEAM_CREATED", format!("{} {}", team.ptt_id, roster.join(" ")));
        Ok(team)
    }

    pub fn snapshot(&self) -> ComplianceSnapshot {
        ComplianceSnapshot {
            ar: self.ar.clone(),
            pcr: self.pcr.clone(),
            teams: self.consents.teams().clone(),
            ledger: self.consents.ledger().clone(),
        }
    }

    pub fn subject(&self, subject_id: &str) -> Option<&SubjectProfile> {
        self.ar.subjects.latest(subject_id)
    }

    pub fn attributes(&self) -> &AttributeRepository {
        &self.ar
    }

    pub fn policies(&self) -> &PolicyRepository {
        &self.pcr
    }

    pub fn consents(&self) -> &ConsentManager {
        &self.consents
    }

    pub fn consents_mut(&mut self) -> &mut ConsentManager {
        &mut self.consents
    }

    pub fn pcat(&self) -> &[PcatEvent] {
        &self.pcat
    }
}

fn notification_text(o: &Obligation, req: &AccessRequest) -> String {
    format!(
        "{:?} -> {} ({}): {} {} {}",
        o.kind, o.target_subject_id, o.triggering_policy_id, req.subject_id, req.operation, req.object_id
    )
}
