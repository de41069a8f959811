//! Pure decision procedure shared by the live decision point and by auditors.
//!
//! Order of evaluation:
//! 1. presented attributes must agree with the repository
//! 2. every rule of every applicable policy is matched
//! 3. any firing deny wins (deny-overrides)
//! 4. no firing permit means deny (default deny)
//! 5. a non-owner additionally needs a satisfied consent
//!
//! Step 5 is split out so the live engine can consume the consent counter
//! while auditors evaluate the same consent as of the request's stamp.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::repository::{AttributeRepository, ObjectEntry, PolicyRepository};
use super::rules::{Effect, Policy, Relation, Rule};
use crate::consent::{ConsentAnswer, ContractLedger, TeamRegistry};
use crate::model::{
    AccessDecision, AccessElements, EnvironmentContext, Obligation, ObligationKind, OperationKind, SubjectProfile,
    Verdict,
};

/// Read-only view of every repository the decision needs, as of one stamp.
#[derive(Clone, Copy)]
pub struct DecisionView<'a> {
    pub ar: &'a AttributeRepository,
    pub pcr: &'a PolicyRepository,
    pub teams: &'a TeamRegistry,
    pub as_of: u64,
}

/// Attributes fetched for one decision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeBundle {
    pub subject: SubjectProfile,
    pub object: ObjectEntry,
    pub environment: EnvironmentContext,
}

pub enum PolicyOutcome {
    Decided(AccessDecision),
    /// Policies permit; the carried decision still needs a consent.
    ConsentRequired(AccessDecision),
}

impl DecisionView<'_> {
    fn relation_holds(&self, relation: Relation, subject: &SubjectProfile, object: &ObjectEntry) -> bool {
        let owner = object.owner();
        match relation {
            Relation::Any => true,
            Relation::Owner => owner == Some(subject.subject_id.as_str()),
            Relation::TeamMember => {
                owner.is_some_and(|o| self.teams.is_member_as_of(o, subject.role, &subject.subject_id, self.as_of))
            }
            Relation::EmergencyContact => owner.is_some_and(|o| {
                subject.role == crate::model::Role::Emc && subject.linked_patient_id.as_deref() == Some(o)
            }),
        }
    }

    fn rule_fires(&self, rule: &Rule, subject: &SubjectProfile, op: OperationKind, object: &ObjectEntry) -> bool {
        rule.roles.matches(&subject.role)
            && rule.operations.matches(&op)
            && rule.covers_record(object.record_key())
            && self.relation_holds(rule.relation, subject, object)
    }

    fn target_applies(policy: &Policy, subject: &SubjectProfile, env: Option<&EnvironmentContext>) -> bool {
        let t = &policy.target;
        if !t.roles.matches(&subject.role) {
            return false;
        }
        match env {
            Some(env) => {
                t.emergency.is_none_or(|e| e == env.emergency_flag)
                    && t.training_expired.is_none_or(|x| x == subject.training_expired(env.calendar_date))
            }
            // Without an environment only unconditional policies apply.
            None => !t.has_environment_predicates(),
        }
    }

    /// Effects of the policies that fire for this request, in priority order.
    fn fired<'p>(
        &self,
        policies: &[&'p Policy],
        subject: &SubjectProfile,
        op: OperationKind,
        object: &ObjectEntry,
        env: Option<&EnvironmentContext>,
    ) -> (Vec<&'p Policy>, Vec<&'p Policy>) {
        let mut permits = Vec::new();
        let mut denies = Vec::new();
        for p in policies {
            if !Self::target_applies(p, subject, env) {
                continue;
            }
            let effects: BTreeSet<Effect> =
                p.rules.iter().filter(|r| self.rule_fires(r, subject, op, object)).map(|r| r.effect).collect();
            if effects.contains(&Effect::Deny) {
                denies.push(*p);
            }
            if effects.contains(&Effect::Permit) {
                permits.push(*p);
            }
        }
        (permits, denies)
    }

    pub fn fetch(
        &self,
        subject_id: &str,
        object_id: &str,
        env: &EnvironmentContext,
    ) -> Result<AttributeBundle, String> {
        let subject = self.ar.subject(subject_id, self.as_of).ok_or_else(|| format!("unknown subject {subject_id}"))?;
        let object = self.ar.object(object_id, self.as_of).ok_or_else(|| format!("unknown object {object_id}"))?;
        Ok(AttributeBundle { subject: subject.clone(), object: object.clone(), environment: env.clone() })
    }

    /// Steps 1-4, and the obligations of a permit.
    pub fn evaluate_policies(&self, elements: &AccessElements) -> PolicyOutcome {
        let Some(snapshot) = &elements.conditions_snapshot else {
            return PolicyOutcome::Decided(AccessDecision::deny("malformed: missing conditions snapshot"));
        };
        let env = &snapshot.environment;
        let bundle = match self.fetch(&elements.subject_id, &elements.object_id, env) {
            Ok(b) => b,
            Err(reason) => return PolicyOutcome::Decided(AccessDecision::deny(reason)),
        };
        let (subject, object) = (&bundle.subject, &bundle.object);
        for (key, value) in &snapshot.presented_attributes {
            let known = match key.as_str() {
                "role" => subject.role.code().to_string(),
                "subject_id" => subject.subject_id.clone(),
                other => {
                    return PolicyOutcome::Decided(AccessDecision::deny(format!("unverifiable attribute `{other}`")))
                }
            };
            if &known != value {
                return PolicyOutcome::Decided(AccessDecision::deny(format!(
                    "presented attribute `{key}` does not match the repository"
                )));
            }
        }

        let policies = self.pcr.active(self.as_of);
        let (permits, denies) = self.fired(&policies, subject, elements.operation, object, Some(env));
        if let Some(first) = denies.first() {
            let mut d = AccessDecision::deny(format!("denied by {}: {}", first.policy_id, first.description));
            d.matched_policy_ids = denies.iter().map(|p| p.policy_id.clone()).collect();
            return PolicyOutcome::Decided(d);
        }
        if permits.is_empty() {
            return PolicyOutcome::Decided(AccessDecision::deny("no applicable permit policy (default deny)"));
        }

        let ids: Vec<String> = permits.iter().map(|p| p.policy_id.clone()).collect();
        let mut obligations = BTreeSet::new();
        if let Some(owner) = object.owner() {
            for p in &permits {
                for o in p.obligations.iter().filter(|o| o.records.matches(&object.record_key().to_string())) {
                    let target = match o.kind {
                        ObligationKind::NotifyPatient | ObligationKind::ShareClaimInfo => Some(owner.to_string()),
                        ObligationKind::NotifyEmergencyContact => {
                            self.ar.emergency_contact_of(owner, self.as_of).map(|s| s.subject_id.clone())
                        }
                    };
                    if let Some(target_subject_id) = target {
                        obligations.insert(Obligation {
                            kind: o.kind,
                            target_subject_id,
                            triggering_policy_id: p.policy_id.clone(),
                        });
                    }
                }
            }
        }
        let decision = AccessDecision {
            verdict: Verdict::Permit,
            reason: format!("permitted by {}", ids.join(", ")),
            matched_policy_ids: ids,
            matched_consent_ids: Vec::new(),
            obligations: obligations.into_iter().collect(),
        };
        match object.owner() {
            Some(owner) if owner != subject.subject_id => PolicyOutcome::ConsentRequired(decision),
            _ => PolicyOutcome::Decided(decision),
        }
    }

    /// First unconditional deny policy that forbids the triple regardless of
    /// environment, if any.
    pub fn forbidden_by(&self, subject_id: &str, op: OperationKind, object_id: &str) -> Option<String> {
        let subject = self.ar.subject(subject_id, self.as_of)?;
        let object = self.ar.object(object_id, self.as_of)?;
        let policies = self.pcr.active(self.as_of);
        let (_, denies) = self.fired(&policies, subject, op, object, None);
        denies.first().map(|p| p.policy_id.clone())
    }

    /// Full decision against the consent ledger as of this view's stamp.
    /// Never mutates; this is what auditors and oracles run.
    pub fn decide(&self, ledger: &ContractLedger, elements: &AccessElements) -> AccessDecision {
        match self.evaluate_policies(elements) {
            PolicyOutcome::Decided(d) => d,
            PolicyOutcome::ConsentRequired(d) => {
                let env = &elements.conditions_snapshot.as_ref().expect("checked above").environment;
                let answer =
                    ledger.evaluate(&elements.subject_id, elements.operation, &elements.object_id, env, self.as_of);
                apply_consent(d, &answer)
            }
        }
    }
}

/// Step 5: completes a policy permit with the consent answer.
pub fn apply_consent(mut pending: AccessDecision, answer: &ConsentAnswer) -> AccessDecision {
    match answer {
        ConsentAnswer::Satisfied { consent_id, .. } => {
            pending.reason = format!("{} with consent {consent_id}", pending.reason);
            pending.matched_consent_ids = vec![consent_id.clone()];
            pending
        }
        ConsentAnswer::NotSatisfied(why) => AccessDecision {
            verdict: Verdict::Deny,
            matched_policy_ids: pending.matched_policy_ids,
            matched_consent_ids: Vec::new(),
            obligations: Vec::new(),
            reason: format!("consent not satisfied: {why}"),
        },
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::model::{ConditionsSnapshot, AUDIT_TRAIL_OBJECT};
    use crate::policy::{ComplianceSnapshot, PolicyEngine};
    use crate::scenario::fixtures::tests_support::shipped_engine;
    use crate::scenario::SCENARIO_START;

    fn setup() -> (PolicyEngine, ComplianceSnapshot) {
        let mut e = shipped_engine();
        e.create_team("PT1001", 1).unwrap();
        let snap = e.snapshot();
        (e, snap)
    }

    fn elements(subject: &str, op: OperationKind, object: &str, attrs: &[(&str, &str)]) -> AccessElements {
        let env = EnvironmentContext::at(SCENARIO_START as u64, "WARD-A", "10.0.0.1", false);
        AccessElements {
            subject_id: subject.into(),
            operation: op,
            object_id: object.into(),
            timestamp: env.wall_clock,
            conditions_snapshot: Some(ConditionsSnapshot {
                environment: env,
                presented_attributes: attrs
                    .iter()
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .collect::<BTreeMap<_, _>>(),
            }),
        }
    }

    fn decided(outcome: PolicyOutcome) -> AccessDecision {
        match outcome {
            PolicyOutcome::Decided(d) => d,
            PolicyOutcome::ConsentRequired(d) => panic!("consent required: {d:?}"),
        }
    }

    #[test]
    fn missing_snapshot_is_malformed() {
        let (e, snap) = setup();
        let mut el = elements("PT1001", OperationKind::Read, "PT1001/HR1001", &[]);
        el.conditions_snapshot = None;
        let d = decided(snap.view(e.current_seq() + 1).evaluate_policies(&el));
        assert!(d.reason.starts_with("malformed"));
    }

    #[test]
    fn presented_attributes_are_checked() {
        let (e, snap) = setup();
        let view = snap.view(e.current_seq() + 1);
        let ok =
            elements("PT1001", OperationKind::Read, "PT1001/HR1001", &[("role", "PATIENT"), ("subject_id", "PT1001")]);
        assert!(decided(view.evaluate_policies(&ok)).is_permit());
        let lie = elements("PT1001", OperationKind::Read, "PT1001/HR1001", &[("role", "DOC")]);
        assert!(decided(view.evaluate_policies(&lie)).reason.contains("does not match"));
        let odd = elements("PT1001", OperationKind::Read, "PT1001/HR1001", &[("clearance", "high")]);
        assert!(decided(view.evaluate_policies(&odd)).reason.contains("unverifiable"));
    }

    #[test]
    fn deny_overrides_permit() {
        let (e, snap) = setup();
        let view = snap.view(e.current_seq() + 1);
        let d = decided(view.evaluate_policies(&elements("PT1001", OperationKind::Write, AUDIT_TRAIL_OBJECT, &[])));
        assert_eq!(d.matched_policy_ids, ["P9"]);
        // Reading the trail object is not covered by any permit.
        let d = decided(view.evaluate_policies(&elements("PT1001", OperationKind::Read, AUDIT_TRAIL_OBJECT, &[])));
        assert!(d.reason.contains("default deny"));
    }

    #[test]
    fn obligations_follow_the_record() {
        let (e, snap) = setup();
        let agent = snap.teams.team_of("PT1001").unwrap().members[&crate::model::Role::Ina].clone();
        let view = snap.view(e.current_seq() + 1);
        let get = |rec: &str| match view.evaluate_policies(&elements(&agent, OperationKind::Read, rec, &[])) {
            PolicyOutcome::ConsentRequired(d) => d,
            PolicyOutcome::Decided(d) => panic!("{d:?}"),
        };
        assert!(get("PT1001/HR1009").obligations.is_empty());
        let claim = get("PT1001/HR1010").obligations;
        assert_eq!(claim.len(), 1);
        assert_eq!((claim[0].kind, claim[0].target_subject_id.as_str()), (ObligationKind::ShareClaimInfo, "PT1001"));
    }

    #[test]
    fn conflicts_only_see_unconditional_denies() {
        let (e, snap) = setup();
        let view = snap.view(e.current_seq() + 1);
        // P10 depends on the access date, so it never makes a consent conflict.
        assert_eq!(view.forbidden_by("PR1001", OperationKind::Read, "PT1001/HR1001"), None);
        assert_eq!(view.forbidden_by("PR1001", OperationKind::Write, AUDIT_TRAIL_OBJECT).as_deref(), Some("P9"));
        assert_eq!(view.forbidden_by("ICA1001", OperationKind::Read, "PT1001/HR1002").as_deref(), Some("P7"));
    }

    #[test]
    fn consent_answers() {
        let pending = AccessDecision {
            verdict: Verdict::Permit,
            matched_policy_ids: vec!["P3".into()],
            matched_consent_ids: vec![],
            obligations: vec![],
            reason: "permitted by P3".into(),
        };
        let yes = apply_consent(
            pending.clone(),
            &ConsentAnswer::Satisfied { consent_id: "IC-1".into(), address: "a".into() },
        );
        assert_eq!(yes.reason, "permitted by P3 with consent IC-1");
        let no = apply_consent(pending, &ConsentAnswer::NotSatisfied("revoked".into()));
        assert_eq!((no.verdict, no.reason.as_str()), (Verdict::Deny, "consent not satisfied: revoked"));
    }
}
