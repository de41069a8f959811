//! Drives a script against a fresh engine, chain and PoC network.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::fixtures::FixtureSet;
use super::script::{map_strings, parse_script, Command, Expect, Step};
use super::ScenarioError;
use crate::anchor::{AnchorRegistry, AnchorRelay};
use crate::audit::{
    anchor_mismatches, recompute_and_check, AuditBlock, AuditChain, ChainCheck, ChainConfig, ComplianceStatus,
};
use crate::model::{
    keypair_for, AccessRequest, Digest, EnvironmentContext, Obligation, OperationKind, Role, SubjectProfile, Verdict,
};
use crate::poc::{run_network, ComplianceVerdict, DroppedTx, NetworkConfig, Vote};
use crate::policy::{PolicyEngine, Registration};
use crate::verifier::{verify_trails, Claim, VerificationReport};

/// Every scenario starts on Monday 2024-03-04 at 09:00 UTC.
pub const SCENARIO_START: i64 = 1_709_542_800;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub seed: u64,
    pub network: NetworkConfig,
    pub chain: ChainConfig,
    pub start: u64,
}

impl RunConfig {
    pub fn new(seed: u64) -> Self {
        RunConfig {
            seed,
            network: NetworkConfig { seed, ..Default::default() },
            chain: ChainConfig::default(),
            start: SCENARIO_START as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub step: usize,
    pub tx_id: u64,
    pub subject_id: String,
    pub operation: OperationKind,
    pub object_id: String,
    pub emergency: bool,
    pub verdict: Verdict,
    pub matched_policy_ids: Vec<String>,
    pub matched_consent_ids: Vec<String>,
    pub obligations: Vec<Obligation>,
    pub reason: String,
    pub payload: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub tx_id: u64,
    pub votes: BTreeMap<String, Vote>,
    #[serde(rename = "final")]
    pub final_status: ComplianceStatus,
    pub block_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationRecord {
    /// Script line, or `None` for the closing sweep.
    pub step: Option<usize>,
    pub report: VerificationReport,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub requests: usize,
    pub permits: usize,
    pub denies: usize,
    pub committed: usize,
    pub compliant: usize,
    pub noncompliant: usize,
    pub not_determined: usize,
    pub dropped: usize,
    pub blocks: usize,
    pub tamper_findings: usize,
}

impl Summary {
    pub fn text(&self) -> String {
        format!(
            "requests={}, permits={}, denies={}, committed={}, compliant={}, noncompliant={}, not_determined={}, dropped={}, blocks={}, tamper_findings={}\n",
            self.requests,
            self.permits,
            self.denies,
            self.committed,
            self.compliant,
            self.noncompliant,
            self.not_determined,
            self.dropped,
            self.blocks,
            self.tamper_findings
        )
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct Bundle {
    pub decisions: Vec<DecisionRecord>,
    pub verdicts: Vec<VerdictRecord>,
    pub dropped: Vec<DroppedTx>,
    pub verifications: Vec<VerificationRecord>,
    pub pcat: Vec<crate::policy::PcatEvent>,
    pub blocks: Vec<Vec<u8>>,
    pub anchors_jsonl: String,
    pub chain_check: ChainCheck,
    pub anchor_mismatches: Vec<u64>,
    pub tampered: Vec<u64>,
    /// Each subject's own copy of its sealed entries.
    pub claims: BTreeMap<String, Vec<Claim>>,
    pub head_hash: Digest,
    pub violations: Vec<String>,
    pub summary: Summary,
}

impl Bundle {
    pub fn chain_jsonl(&self) -> String {
        crate::audit::export_blocks_jsonl(&self.blocks)
    }

    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

pub struct Runner {
    config: RunConfig,
    engine: PolicyEngine,
    registry: Arc<AnchorRegistry>,
    chain: AuditChain,
    clock: u64,
    batches: u64,
    emitted: usize,
    decisions: Vec<DecisionRecord>,
    verdicts: Vec<ComplianceVerdict>,
    dropped: Vec<DroppedTx>,
    claims: BTreeMap<String, Vec<Claim>>,
    tampered: BTreeSet<u64>,
    verifications: Vec<VerificationRecord>,
    violations: Vec<String>,
}

impl Runner {
    pub fn new(fixtures: &FixtureSet, config: RunConfig) -> Result<Self, ScenarioError> {
        let registry = AnchorRegistry::new();
        let mut engine = PolicyEngine::new(registry.clone());
        engine.set_time(config.start);
        fixtures.register(&mut engine)?;
        let chain = AuditChain::new(config.chain.clone(), AnchorRelay::new(registry.clone()))
            .map_err(|e| ScenarioError::Script { step: 0, message: e.to_string() })?;
        Ok(Runner {
            clock: config.start,
            config,
            engine,
            registry,
            chain,
            batches: 0,
            emitted: 0,
            decisions: Vec::new(),
            verdicts: Vec::new(),
            dropped: Vec::new(),
            claims: BTreeMap::new(),
            tampered: BTreeSet::new(),
            verifications: Vec::new(),
            violations: Vec::new(),
        })
    }

    pub fn engine(&self) -> &PolicyEngine {
        &self.engine
    }

    pub fn chain(&self) -> &AuditChain {
        &self.chain
    }

    pub fn run(mut self, steps: &[Step]) -> Result<Bundle, ScenarioError> {
        for step in steps {
            self.step(step).map_err(|message| ScenarioError::Script { step: step.index, message })?;
        }
        self.finish().map_err(|message| ScenarioError::Script { step: 0, message })
    }

    fn resolve(&self, s: &str) -> Result<String, String> {
        let Some(rest) = s.strip_prefix('@') else {
            return Ok(s.to_string());
        };
        let parts: Vec<&str> = rest.split(':').collect();
        match parts.as_slice() {
            ["team", patient, role] => {
                let role: Role = role.parse().map_err(|_| format!("unknown role in `{s}`"))?;
                let team =
                    self.engine.consents().teams().team_of(patient).ok_or_else(|| format!("{patient} has no team"))?;
                team.members.get(&role).cloned().ok_or_else(|| format!("no {role} in {}", team.ptt_id))
            }
            ["ec", patient] => self
                .engine
                .attributes()
                .emergency_contact_of(patient, u64::MAX)
                .map(|p| p.subject_id.clone())
                .ok_or_else(|| format!("{patient} has no emergency contact")),
            _ => Err(format!("unknown placeholder `{s}`")),
        }
    }

    fn step(&mut self, step: &Step) -> Result<(), String> {
        let resolved = map_strings(step.raw.clone(), &mut |s| self.resolve(s))?;
        let cmd: Command = serde_json::from_value(resolved).map_err(|e| e.to_string())?;
        match cmd {
            Command::CreateTeam { patient, seed } => {
                self.engine.create_team(&patient, seed.unwrap_or(self.config.seed)).map_err(|e| e.to_string())?;
            }
            Command::CreatePpa { draft } => {
                self.engine.create_ppa(draft).map_err(|e| e.to_string())?;
            }
            Command::DeployConsents { ppa_id } => {
                for r in self.engine.deploy_consents(&ppa_id).map_err(|e| e.to_string())? {
                    r.map_err(|e| e.to_string())?;
                }
            }
            Command::Access { subject, op, object, emergency, location, ip, forge, attributes, expect } => {
                self.access(step.index, &subject, op, &object, emergency, &location, &ip, forge, attributes, expect)?;
            }
            Command::AdvanceClock { seconds, to } => {
                let target = match (seconds, to) {
                    (Some(s), None) => self.clock + s,
                    (None, Some(t)) => u64::try_from(t.timestamp()).map_err(|_| "clock before epoch".to_string())?,
                    _ => return Err("advance_clock needs exactly one of `seconds` or `to`".into()),
                };
                if target < self.clock {
                    return Err("the clock cannot move backwards".into());
                }
                self.settle()?;
                self.clock = target;
                self.engine.set_time(target);
                let sealed = self.chain.seal_due(target).map_err(|e| e.to_string())?;
                self.record_sealed(sealed);
            }
            Command::UpdateSubject { subject, set } => {
                let current = self.engine.subject(&subject).ok_or_else(|| format!("unknown subject {subject}"))?;
                let mut value = serde_json::to_value(current).map_err(|e| e.to_string())?;
                let obj = value.as_object_mut().expect("profiles serialize as objects");
                for (k, v) in set {
                    obj.insert(k, v);
                }
                let updated: SubjectProfile = serde_json::from_value(value).map_err(|e| e.to_string())?;
                self.engine.pcap_update(Registration::Subject(updated)).map_err(|e| e.to_string())?;
            }
            Command::Tamper { height, byte, bit } => {
                self.chain.tamper_bit(height, byte, bit).map_err(|e| e.to_string())?;
                self.tampered.insert(height);
            }
            Command::Revoke { patient, consent_id } => {
                self.engine.revoke_consent(&patient, &consent_id).map_err(|e| e.to_string())?;
            }
            Command::Verify { subject, expect_modified } => {
                let report = self.verify(&subject)?;
                if let Some(expected) = expect_modified {
                    let got = report.modified_heights();
                    if got != expected {
                        self.violations.push(format!(
                            "step {}: verify {subject} expected modified heights {expected:?}, got {got:?}",
                            step.index
                        ));
                    }
                }
                self.verifications.push(VerificationRecord { step: Some(step.index), report });
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn access(
        &mut self,
        step: usize,
        subject: &str,
        op: OperationKind,
        object: &str,
        emergency: bool,
        location: &str,
        ip: &str,
        forge: bool,
        attributes: Option<BTreeMap<String, String>>,
        expect: Option<Expect>,
    ) -> Result<(), String> {
        let attributes = attributes.unwrap_or_else(|| {
            self.engine
                .subject(subject)
                .map(|s| BTreeMap::from([("role".to_string(), s.role.code().to_string())]))
                .unwrap_or_default()
        });
        let key_owner = if forge { format!("forged/{subject}") } else { subject.to_string() };
        let (sk, _) = keypair_for(&key_owner);
        let env = EnvironmentContext::at(self.clock, location, ip, emergency);
        let request = AccessRequest::signed(&sk, subject, op, object, env, attributes);
        let e = self.engine.pcep_enforce(&request);
        let d = e.decision;
        if let Some(x) = &expect {
            let mut fail = |what: String| self.violations.push(format!("step {step}: {what}"));
            if x.verdict.is_some_and(|v| v != d.verdict) {
                fail(format!("expected {:?}, got {:?} ({})", x.verdict.unwrap(), d.verdict, d.reason));
            }
            if let Some(kinds) = &x.obligations {
                let got: BTreeSet<_> = d.obligations.iter().map(|o| o.kind).collect();
                if &got != kinds {
                    fail(format!("expected obligations {kinds:?}, got {got:?}"));
                }
            }
            if let Some(s) = &x.reason_contains {
                if !d.reason.contains(s.as_str()) {
                    fail(format!("reason `{}` does not contain `{s}`", d.reason));
                }
            }
        }
        self.decisions.push(DecisionRecord {
            step,
            tx_id: e.tx_id,
            subject_id: subject.to_string(),
            operation: op,
            object_id: object.to_string(),
            emergency,
            verdict: d.verdict,
            matched_policy_ids: d.matched_policy_ids,
            matched_consent_ids: d.matched_consent_ids,
            obligations: d.obligations,
            reason: d.reason,
            payload: e.payload,
        });
        self.clock += 1;
        Ok(())
    }

    /// Runs the PoC network over everything emitted since the last call and
    /// seals whatever is due.
    fn settle(&mut self) -> Result<(), String> {
        let batch = self.engine.drain_audit();
        if !batch.is_empty() {
            self.emitted += batch.len();
            let snapshot = Arc::new(self.engine.snapshot());
            let mut network = self.config.network.clone();
            network.seed = network.seed.wrapping_add(self.batches);
            self.batches += 1;
            let outcome =
                run_network(batch, snapshot, &network, &mut self.chain, self.clock).map_err(|e| e.to_string())?;
            self.verdicts.extend(outcome.verdicts);
            self.dropped.extend(outcome.dropped);
        }
        let sealed = self.chain.seal_due(self.clock).map_err(|e| e.to_string())?;
        self.record_sealed(sealed);
        Ok(())
    }

    /// Each subject keeps its own copy of its sealed entries for later
    /// verification.
    fn record_sealed(&mut self, blocks: Vec<AuditBlock>) {
        for b in blocks {
            for t in b.transactions {
                self.claims.entry(t.subject_id.clone()).or_default().push(Claim { height: b.block_id, transaction: t });
            }
        }
    }

    fn verify(&self, subject: &str) -> Result<VerificationReport, String> {
        let claims = self.claims.get(subject).map(Vec::as_slice).unwrap_or(&[]);
        verify_trails(self.chain.raw_blocks(), &self.registry, subject, claims).map_err(|e| e.to_string())
    }

    fn finish(mut self) -> Result<Bundle, String> {
        self.settle()?;
        let sealed = self.chain.flush().map_err(|e| e.to_string())?;
        self.record_sealed(sealed);

        let mut findings = BTreeSet::new();
        let subjects: Vec<String> = self.claims.keys().cloned().collect();
        for s in subjects {
            let report = self.verify(&s)?;
            findings.extend(report.modified_heights());
            self.verifications.push(VerificationRecord { step: None, report });
        }
        let blocks = self.chain.raw_blocks().to_vec();
        let chain_check = recompute_and_check(&blocks);
        let mismatches = anchor_mismatches(&blocks, &self.registry);

        if self.tampered.is_empty() {
            if !chain_check.is_ok() {
                self.violations.push(format!("untampered chain failed its check: {chain_check:?}"));
            }
            if !findings.is_empty() || !mismatches.is_empty() {
                self.violations.push(format!("false alarm at heights {findings:?}"));
            }
        }
        for h in &self.tampered {
            if !findings.contains(h) {
                self.violations.push(format!("tamper at height {h} went undetected"));
            }
        }
        let committed = self.verdicts.len();
        if self.decisions.len() != self.emitted || committed + self.dropped.len() != self.emitted {
            self.violations.push(format!(
                "totality: {} requests, {} audit transactions, {} committed + {} dropped",
                self.decisions.len(),
                self.emitted,
                committed,
                self.dropped.len()
            ));
        }

        let count = |s: ComplianceStatus| self.verdicts.iter().filter(|v| v.final_status == s).count();
        let summary = Summary {
            requests: self.decisions.len(),
            permits: self.decisions.iter().filter(|d| d.verdict == Verdict::Permit).count(),
            denies: self.decisions.iter().filter(|d| d.verdict == Verdict::Deny).count(),
            committed,
            compliant: count(ComplianceStatus::Compliant),
            noncompliant: count(ComplianceStatus::Noncompliant),
            not_determined: count(ComplianceStatus::NotDetermined),
            dropped: self.dropped.len(),
            blocks: blocks.len(),
            tamper_findings: findings.len(),
        };
        let verdicts = self
            .verdicts
            .iter()
            .map(|v| VerdictRecord {
                tx_id: v.tx_id,
                votes: v.votes.clone(),
                final_status: v.final_status,
                block_id: self.chain.block_of(v.tx_id),
            })
            .collect();
        Ok(Bundle {
            decisions: self.decisions,
            verdicts,
            dropped: self.dropped,
            verifications: self.verifications,
            pcat: self.engine.pcat().to_vec(),
            anchors_jsonl: self.registry.export_jsonl(),
            head_hash: self.chain.head_hash(),
            blocks,
            chain_check,
            anchor_mismatches: mismatches,
            tampered: self.tampered.into_iter().collect(),
            claims: self.claims,
            violations: self.violations,
            summary,
        })
    }
}

/// Parses and runs `script` against freshly registered fixtures.
pub fn run_scenario(fixtures: &FixtureSet, script: &str, config: &RunConfig) -> Result<Bundle, ScenarioError> {
    let steps = parse_script(script)?;
    Runner::new(fixtures, config.clone())?.run(&steps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::fixtures::tests_support::shipped_dir;

    fn fixtures() -> FixtureSet {
        FixtureSet::read(&shipped_dir()).unwrap()
    }

    #[test]
    fn empty_script_gives_zero_summary() {
        let b = run_scenario(&fixtures(), "", &RunConfig::new(1)).unwrap();
        assert_eq!(b.summary, Summary::default());
        assert!(b.is_clean());
        assert_eq!(b.summary.text(), "requests=0, permits=0, denies=0, committed=0, compliant=0, noncompliant=0, not_determined=0, dropped=0, blocks=0, tamper_findings=0\n");
    }

    #[test]
    fn failed_expectation_is_a_violation() {
        let script =
            r#"{"cmd":"access","subject":"PT1001","op":"READ","object":"PT1001/HR1001","expect":{"verdict":"DENY"}}"#;
        let b = run_scenario(&fixtures(), script, &RunConfig::new(1)).unwrap();
        assert_eq!(b.violations.len(), 1);
        assert!(b.violations[0].starts_with("step 1: expected Deny"), "{:?}", b.violations);
    }

    #[test]
    fn script_errors_carry_the_line() {
        let script =
            "\n{\"cmd\":\"access\",\"subject\":\"@team:PT1001:DOC\",\"op\":\"READ\",\"object\":\"PT1001/HR1001\"}";
        let err = run_scenario(&fixtures(), script, &RunConfig::new(1)).unwrap_err();
        assert_eq!(err, ScenarioError::Script { step: 2, message: "PT1001 has no team".into() });
        let err = run_scenario(&fixtures(), r#"{"cmd":"tamper","height":0,"byte":0,"bit":0}"#, &RunConfig::new(1))
            .unwrap_err();
        assert!(matches!(err, ScenarioError::Script { step: 1, .. }));
    }

    #[test]
    fn clock_only_moves_forward() {
        let script = r#"{"cmd":"advance_clock","to":"2020-01-01T00:00:00Z"}"#;
        assert!(run_scenario(&fixtures(), script, &RunConfig::new(1)).is_err());
        let script = r#"{"cmd":"advance_clock","seconds":5,"to":"2030-01-01T00:00:00Z"}"#;
        assert!(run_scenario(&fixtures(), script, &RunConfig::new(1)).is_err());
    }

    #[test]
    fn sealed_entries_become_claims() {
        let script = [
            r#"{"cmd":"access","subject":"PT1001","op":"READ","object":"PT1001/HR1001"}"#,
            r#"{"cmd":"access","subject":"PT1002","op":"READ","object":"PT1002/HR1001"}"#,
            r#"{"cmd":"advance_clock","seconds":10}"#,
            r#"{"cmd":"verify","subject":"PT1001","expect_modified":[]}"#,
        ]
        .join("\n");
        let b = run_scenario(&fixtures(), &script, &RunConfig::new(1)).unwrap();
        assert!(b.is_clean(), "{:?}", b.violations);
        assert_eq!(b.claims.keys().collect::<Vec<_>>(), ["PT1001", "PT1002"]);
        // One mid-script verification plus one per subject at the end.
        assert_eq!(b.verifications.len(), 3);
        assert_eq!(b.verdicts.iter().map(|v| v.block_id).collect::<Vec<_>>(), [Some(0), Some(0)]);
    }
}
