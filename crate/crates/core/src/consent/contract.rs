//! In-process consent contract ledger.
//!
//! Every state change carries the global logical stamp at which it happened.
//! Evaluation "as of" a stamp only sees changes with a strictly smaller
//! stamp, which lets auditors replay a decision later against exactly the
//! state the live engine saw.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::ppa::InformedConsent;
use super::ConsentError;
use crate::model::{self, Canonical, Condition, EnvironmentContext, OperationKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ConsentStatus {
    Active,
    Expired,
    Revoked,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ConsentAnswer {
    Satisfied { consent_id: String, address: String },
    NotSatisfied(String),
}

impl ConsentAnswer {
    pub fn is_satisfied(&self) -> bool {
        matches!(self, ConsentAnswer::Satisfied { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsentContract {
    pub address: String,
    pub consent: InformedConsent,
    pub owner_patient_id: String,
    pub ppa_id: String,
    pub valid_from: NaiveDate,
    pub valid_until: NaiveDate,
    pub deployed_seq: u64,
    pub revoked_seq: Option<u64>,
    /// `(grantee, stamp)` for every satisfied query.
    pub consumption: Vec<(String, u64)>,
}

impl ConsentContract {
    pub fn usage(&self, grantee: &str, as_of: u64) -> u32 {
        self.consumption.iter().filter(|(g, s)| g == grantee && *s < as_of).count() as u32
    }

    /// Current usage per grantee.
    pub fn usage_counters(&self) -> BTreeMap<String, u32> {
        let mut out = BTreeMap::new();
        for (g, _) in &self.consumption {
            *out.entry(g.clone()).or_insert(0) += 1;
        }
        out
    }

    fn frequency_limit(&self) -> Option<u32> {
        self.consent
            .conditions
            .iter()
            .filter_map(|c| match c {
                Condition::AccessFrequencyLimit { max } => Some(*max),
                _ => None,
            })
            .min()
    }

    pub fn status_for(&self, grantee: &str, as_of: u64) -> ConsentStatus {
        if self.revoked_seq.is_some_and(|r| r < as_of) {
            return ConsentStatus::Revoked;
        }
        match self.frequency_limit() {
            Some(max) if self.usage(grantee, as_of) >= max => ConsentStatus::Expired,
            _ => ConsentStatus::Active,
        }
    }

    fn covers(&self, subject: &str, op: OperationKind, object: &str) -> bool {
        self.consent.grantee_subject_ids.contains(subject)
            && self.consent.operations.contains(&op)
            && self.consent.object_ids.contains(object)
    }

    /// Why this contract does not satisfy the request, if it doesn't.
    fn check(&self, subject: &str, env: &EnvironmentContext, as_of: u64) -> Result<(), String> {
        match self.status_for(subject, as_of) {
            ConsentStatus::Revoked => return Err(format!("consent {} revoked", self.consent.consent_id)),
            ConsentStatus::Expired => {
                return Err(format!("consent {} expired (access frequency)", self.consent.consent_id))
            }
            ConsentStatus::Active => {}
        }
        if env.calendar_date < self.valid_from || env.calendar_date > self.valid_until {
            return Err(format!("consent {} outside agreement validity", self.consent.consent_id));
        }
        for c in &self.consent.conditions {
            c.check(env).map_err(|label| format!("consent {} condition failed: {label}", self.consent.consent_id))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct ContractLedger {
    contracts: BTreeMap<String, ConsentContract>,
    by_consent: BTreeMap<String, String>,
    order: Vec<String>,
}

impl ContractLedger {
    pub fn deploy(
        &mut self,
        consent: InformedConsent,
        owner_patient_id: &str,
        ppa_id: &str,
        validity: (NaiveDate, NaiveDate),
        seq: u64,
    ) -> Result<String, ConsentError> {
        if self.by_consent.contains_key(&consent.consent_id) {
            return Err(ConsentError::AlreadyDeployed(consent.consent_id));
        }
        let nonce = self.order.len() as u64;
        let address = model::digest_concat([consent.canonical_bytes().as_slice(), &nonce.to_be_bytes()]).to_hex();
        self.by_consent.insert(consent.consent_id.clone(), address.clone());
        self.order.push(address.clone());
        self.contracts.insert(
            address.clone(),
            ConsentContract {
                address: address.clone(),
                consent,
                owner_patient_id: owner_patient_id.to_string(),
                ppa_id: ppa_id.to_string(),
                valid_from: validity.0,
                valid_until: validity.1,
                deployed_seq: seq,
                revoked_seq: None,
                consumption: Vec::new(),
            },
        );
        Ok(address)
    }

    /// Pure evaluation against the state visible at `as_of`.
    pub fn evaluate(
        &self,
        subject: &str,
        op: OperationKind,
        object: &str,
        env: &EnvironmentContext,
        as_of: u64,
    ) -> ConsentAnswer {
        let mut first_failure = None;
        for address in &self.order {
            let c = &self.contracts[address];
            if c.deployed_seq >= as_of || !c.covers(subject, op, object) {
                continue;
            }
            match c.check(subject, env, as_of) {
                Ok(()) => {
                    return ConsentAnswer::Satisfied {
                        consent_id: c.consent.consent_id.clone(),
                        address: address.clone(),
                    }
                }
                Err(reason) => {
                    first_failure.get_or_insert(reason);
                }
            }
        }
        ConsentAnswer::NotSatisfied(
            first_failure.unwrap_or_else(|| format!("no consent grants {subject} {op} on {object}")),
        )
    }

    pub fn consume(&mut self, address: &str, grantee: &str, seq: u64) {
        if let Some(c) = self.contracts.get_mut(address) {
            c.consumption.push((grantee.to_string(), seq));
        }
    }

    /// Evaluates at `seq` and, when satisfied, records the use at `seq`.
    pub fn query(
        &mut self,
        subject: &str,
        op: OperationKind,
        object: &str,
        env: &EnvironmentContext,
        seq: u64,
    ) -> ConsentAnswer {
        let answer = self.evaluate(subject, op, object, env, seq);
        if let ConsentAnswer::Satisfied { address, .. } = &answer {
            self.consume(address, subject, seq);
        }
        answer
    }

    pub fn revoke(&mut self, patient_id: &str, consent_id: &str, seq: u64) -> Result<ConsentStatus, ConsentError> {
        let address =
            self.by_consent.get(consent_id).ok_or_else(|| ConsentError::UnknownConsent(consent_id.to_string()))?;
        let c = self.contracts.get_mut(address).expect("index and contracts agree");
        if c.owner_patient_id != patient_id {
            return Err(ConsentError::NotOwner { caller: patient_id.to_string(), consent_id: consent_id.to_string() });
        }
        c.revoked_seq.get_or_insert(seq);
        Ok(ConsentStatus::Revoked)
    }

    pub fn get(&self, address: &str) -> Option<&ConsentContract> {
        self.contracts.get(address)
    }

    pub fn by_consent_id(&self, consent_id: &str) -> Option<&ConsentContract> {
        self.by_consent.get(consent_id).and_then(|a| self.contracts.get(a))
    }

    pub fn contains_consent(&self, consent_id: &str) -> bool {
        self.by_consent.contains_key(consent_id)
    }

    /// Contracts in deployment order.
    pub fn iter(&self) -> impl Iterator<Item = &ConsentContract> {
        self.order.iter().map(|a| &self.contracts[a])
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::epoch_seconds;

    fn env_at(hms: &str) -> EnvironmentContext {
        let ts = epoch_seconds("2024-03-04".parse().unwrap(), hms.parse().unwrap());
        EnvironmentContext::at(ts, "WARD-A", "10.0.0.1", false)
    }

    fn consent(conditions: Vec<Condition>) -> InformedConsent {
        InformedConsent {
            consent_id: "C1".into(),
            grantee_subject_ids: ["PR1001".to_string()].into(),
            object_ids: ["PT1001/HR1005".to_string()].into(),
            operations: [OperationKind::Read].into(),
            conditions,
        }
    }

    fn ledger(conditions: Vec<Condition>) -> ContractLedger {
        let mut l = ContractLedger::default();
        let window = ("2024-01-01".parse().unwrap(), "2024-12-31".parse().unwrap());
        l.deploy(consent(conditions), "PT1001", "PPA-PT1001-1", window, 1).unwrap();
        l
    }

    #[test]
    fn office_hours() {
        let w = Condition::TimeWindow { start: "08:00:00".parse().unwrap(), end: "17:00:00".parse().unwrap() };
        let mut l = ledger(vec![w]);
        assert!(l.query("PR1001", OperationKind::Read, "PT1001/HR1005", &env_at("09:30:00"), 2).is_satisfied());
        let late = l.query("PR1001", OperationKind::Read, "PT1001/HR1005", &env_at("17:30:00"), 3);
        assert_eq!(late, ConsentAnswer::NotSatisfied("consent C1 condition failed: time window".into()));
    }

    #[test]
    fn frequency_limit_five() {
        let mut l = ledger(vec![Condition::AccessFrequencyLimit { max: 5 }]);
        let results: Vec<bool> = (0..8)
            .map(|i| {
                l.query("PR1001", OperationKind::Read, "PT1001/HR1005", &env_at("09:00:00"), 10 + i).is_satisfied()
            })
            .collect();
        assert_eq!(results, [true, true, true, true, true, false, false, false]);
        let c = l.by_consent_id("C1").unwrap();
        assert_eq!(c.usage_counters()["PR1001"], 5);
        assert_eq!(c.status_for("PR1001", u64::MAX), ConsentStatus::Expired);
    }

    #[test]
    fn as_of_view_matches_live_history() {
        let mut l = ledger(vec![Condition::AccessFrequencyLimit { max: 2 }]);
        let env = env_at("09:00:00");
        let live: Vec<bool> =
            (2..6).map(|s| l.query("PR1001", OperationKind::Read, "PT1001/HR1005", &env, s).is_satisfied()).collect();
        let replay: Vec<bool> = (2..6)
            .map(|s| l.evaluate("PR1001", OperationKind::Read, "PT1001/HR1005", &env, s).is_satisfied())
            .collect();
        assert_eq!(live, replay);
        assert!(
            !l.evaluate("PR1001", OperationKind::Read, "PT1001/HR1005", &env, 1).is_satisfied(),
            "not yet deployed"
        );
    }

    #[test]
    fn revocation() {
        let mut l = ledger(vec![]);
        let env = env_at("09:00:00");
        assert!(l.query("PR1001", OperationKind::Read, "PT1001/HR1005", &env, 2).is_satisfied());
        assert!(matches!(l.revoke("PT1002", "C1", 3), Err(ConsentError::NotOwner { .. })));
        assert!(matches!(l.revoke("PT1001", "C9", 3), Err(ConsentError::UnknownConsent(_))));
        assert_eq!(l.revoke("PT1001", "C1", 3).unwrap(), ConsentStatus::Revoked);
        assert!(!l.query("PR1001", OperationKind::Read, "PT1001/HR1005", &env, 4).is_satisfied());
        // Before the revocation stamp the replay still sees it active.
        assert!(l.evaluate("PR1001", OperationKind::Read, "PT1001/HR1005", &env, 3).is_satisfied());
    }

    #[test]
    fn other_triples_are_not_covered() {
        let l = ledger(vec![]);
        let env = env_at("09:00:00");
        assert!(!l.evaluate("PR1002", OperationKind::Read, "PT1001/HR1005", &env, 5).is_satisfied());
        assert!(!l.evaluate("PR1001", OperationKind::Write, "PT1001/HR1005", &env, 5).is_satisfied());
        assert!(!l.evaluate("PR1001", OperationKind::Read, "PT1001/HR1006", &env, 5).is_satisfied());
    }
}
