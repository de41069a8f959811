//! Node state machines over the simulated bus.
//!
//! Flow: client -> order (phase 1) -> validator (phase 2) -> every auditor
//! (phase 3) -> committer (phase 4). The order node also hands the committer
//! a reference copy of each transaction, which is what phase 4 compares
//! against. The committer finalises once the bus is quiet; auditors that
//! never answered count as abstentions.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::auditor::{Auditor, Behaviour, Vote};
use super::bus::{Bus, NodeId};
use super::phases::{self, ComplianceVerdict, DroppedTx, Ordering};
use super::PocError;
use crate::audit::{AuditChain, AuditTransaction};
use crate::policy::ComplianceSnapshot;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultPlan {
    /// Auditor indices that invert their votes.
    #[serde(default)]
    pub byzantine: Vec<usize>,
    /// Auditor indices that never answer.
    #[serde(default)]
    pub crashed: Vec<usize>,
    /// Validator indices that rewrite the object id before forwarding.
    #[serde(default)]
    pub mutating_validators: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub auditors: usize,
    pub validators: usize,
    /// Votes needed for a final status. Defaults to a strict majority and
    /// may not be lower than one.
    #[serde(default)]
    pub quorum: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ordering: Ordering,
    #[serde(default)]
    pub faults: FaultPlan,
    /// Per-message latency bounds in simulated milliseconds.
    #[serde(default = "default_latency")]
    pub latency_ms: (u64, u64),
}

fn default_latency() -> (u64, u64) {
    (1, 40)
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            auditors: 5,
            validators: 2,
            quorum: None,
            seed: 0,
            ordering: Ordering::Fifo,
            faults: FaultPlan::default(),
            latency_ms: default_latency(),
        }
    }
}

impl NetworkConfig {
    /// Resolved quorum after validation.
    pub fn validate(&self) -> Result<usize, PocError> {
        if self.auditors == 0 {
            return Err(PocError::Config("at least one auditor is required".into()));
        }
        if self.validators == 0 {
            return Err(PocError::Config("at least one validator is required".into()));
        }
        let q = self.quorum.unwrap_or(self.auditors / 2 + 1);
        if 2 * q <= self.auditors || q > self.auditors {
            return Err(PocError::Config(format!("quorum {q} is not a strict majority of {} auditors", self.auditors)));
        }
        let f = &self.faults;
        if f.byzantine.iter().chain(&f.crashed).any(|i| *i >= self.auditors)
            || f.mutating_validators.iter().any(|i| *i >= self.validators)
        {
            return Err(PocError::Config("fault plan names a node that does not exist".into()));
        }
        Ok(q)
    }
}

#[derive(Debug)]
enum Message {
    SubmitBatch(Vec<AuditTransaction>),
    Reference { ordered: Vec<AuditTransaction>, invalid: Vec<(AuditTransaction, String)> },
    Validate { position: usize, tx: AuditTransaction },
    Validated { position: usize, tx: AuditTransaction },
    Rejected { position: usize, reason: String },
    Audit { position: usize, tx: AuditTransaction },
    Vote { position: usize, auditor: usize, vote: Vote },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PocOutcome {
    /// Committed transactions in commit order.
    pub verdicts: Vec<ComplianceVerdict>,
    pub dropped: Vec<DroppedTx>,
    pub messages: u64,
}

#[derive(Default)]
struct CommitterState {
    reference: Vec<AuditTransaction>,
    invalid: Vec<(AuditTransaction, String)>,
    validated: BTreeMap<usize, AuditTransaction>,
    rejected: BTreeMap<usize, String>,
    votes: BTreeMap<usize, BTreeMap<String, Vote>>,
}

fn auditor_id(i: usize) -> String {
    format!("AUDITOR-{}", i + 1)
}

/// Runs one batch through the four phases and commits the survivors to
/// `chain` at simulated time `commit_at`.
pub fn run_network(
    batch: Vec<AuditTransaction>,
    snapshot: Arc<ComplianceSnapshot>,
    config: &NetworkConfig,
    chain: &mut AuditChain,
    commit_at: u64,
) -> Result<PocOutcome, PocError> {
    let quorum = config.validate()?;
    let auditors: Vec<Auditor> = (0..config.auditors)
        .map(|i| {
            let behaviour = if config.faults.crashed.contains(&i) {
                Behaviour::Crashed
            } else if config.faults.byzantine.contains(&i) {
                Behaviour::Byzantine
            } else {
                Behaviour::Honest
            };
            // Each auditor gets its own copy: no state is shared between them.
            Auditor::new(auditor_id(i), behaviour, Arc::new((*snapshot).clone()))
        })
        .collect();
    let mutating: BTreeSet<usize> = config.faults.mutating_validators.iter().copied().collect();

    let mut bus = Bus::new(config.seed, config.latency_ms);
    let mut committer = CommitterState::default();
    bus.send(NodeId::Client, NodeId::Order, Message::SubmitBatch(batch));

    while let Some(env) = bus.pop() {
        match (env.to, env.message) {
            (NodeId::Order, Message::SubmitBatch(txs)) => {
                let (ordered, invalid) =
                    phases::phase1_order(txs, |s, at| snapshot.subject_key(s, at), config.ordering);
                for (position, tx) in ordered.iter().enumerate() {
                    let v = position % config.validators;
                    bus.send(NodeId::Order, NodeId::Validator(v), Message::Validate { position, tx: tx.clone() });
                }
                bus.send(NodeId::Order, NodeId::Committer, Message::Reference { ordered, invalid });
            }
            (NodeId::Validator(v), Message::Validate { position, mut tx }) => {
                match phases::validate_tx(&tx, &snapshot) {
                    Err(reason) => bus.send(env.to, NodeId::Committer, Message::Rejected { position, reason }),
                    Ok(()) => {
                        if mutating.contains(&v) {
                            tx.object_id = swap_record(&tx.object_id);
                        }
                        for a in 0..auditors.len() {
                            bus.send(env.to, NodeId::Auditor(a), Message::Audit { position, tx: tx.clone() });
                        }
                        bus.send(env.to, NodeId::Committer, Message::Validated { position, tx });
                    }
                }
            }
            (NodeId::Auditor(a), Message::Audit { position, tx }) => {
                if let Some(vote) = auditors[a].vote(&tx) {
                    bus.send(env.to, NodeId::Committer, Message::Vote { position, auditor: a, vote });
                }
            }
            (NodeId::Committer, Message::Reference { ordered, invalid }) => {
                committer.reference = ordered;
                committer.invalid = invalid;
            }
            (NodeId::Committer, Message::Validated { position, tx }) => {
                committer.validated.insert(position, tx);
            }
            (NodeId::Committer, Message::Rejected { position, reason }) => {
                committer.rejected.insert(position, reason);
            }
            (NodeId::Committer, Message::Vote { position, auditor, vote }) => {
                committer.votes.entry(position).or_default().insert(auditor_id(auditor), vote);
            }
            (to, m) => return Err(PocError::Protocol(format!("{to:?} cannot handle {m:?}"))),
        }
    }

    let mut outcome = PocOutcome { messages: bus.sent(), ..Default::default() };
    for (tx, reason) in committer.invalid {
        outcome.dropped.push(DroppedTx { tx_id: tx.tx_id, phase: "ORDER".into(), reason });
    }
    for (position, reference) in committer.reference.iter().enumerate() {
        if let Some(reason) = committer.rejected.remove(&position) {
            outcome.dropped.push(DroppedTx { tx_id: reference.tx_id, phase: "VALIDATION".into(), reason });
            continue;
        }
        let Some(candidate) = committer.validated.get(&position) else {
            outcome.dropped.push(DroppedTx {
                tx_id: reference.tx_id,
                phase: "VALIDATION".into(),
                reason: "no validator response".into(),
            });
            continue;
        };
        let votes = committer.votes.remove(&position).unwrap_or_default();
        let status = phases::aggregate(&votes, auditors.len(), quorum);
        let key =
            snapshot.subject_key(&reference.subject_id, reference.tx_id).expect("phase 1 only passes known submitters");
        match phases::phase4_commit(reference, candidate, status, &key, chain, commit_at) {
            Ok(()) => outcome.verdicts.push(ComplianceVerdict { tx_id: reference.tx_id, votes, final_status: status }),
            Err(d) => outcome.dropped.push(d),
        }
    }
    Ok(outcome)
}

/// What a faulty validator does to a transaction: points it at a different
/// record of the same patient.
fn swap_record(object_id: &str) -> String {
    match object_id.rsplit_once("HR") {
        Some((prefix, n)) => {
            let n: u32 = n.parse().unwrap_or(1001);
            let next = if n >= 1010 { 1001 } else { n + 1 };
            format!("{prefix}HR{next}")
        }
        None => format!("{object_id}-X"),
    }
}
