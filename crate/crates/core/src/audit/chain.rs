use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::transaction::{AuditTransaction, ComplianceStatus};
use crate::anchor::{audit_key, AnchorError, AnchorRegistry, AnchorRelay};
use crate::model::{self, Canonical, Digest, VerifyingKey};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AuditError {
    #[error("transaction {0} has an invalid submitter signature")]
    BadSignature(u64),
    #[error("transaction {0} was submitted with a non-pending status")]
    NonPendingStatus(u64),
    #[error("transaction {0} is not in the pending pool")]
    UnknownTx(u64),
    #[error("transaction {0} already has a terminal status")]
    AlreadyFinal(u64),
    #[error("status update for transaction {0} must be terminal")]
    PendingStatus(u64),
    #[error("`{0}` holds no audit-read capability")]
    Unauthorized(String),
    #[error("no block at height {0}")]
    UnknownBlock(u64),
    #[error("byte {byte} is outside block {height} ({len} bytes)")]
    OutOfRange { height: u64, byte: usize, len: usize },
    #[error("block {0} does not decode")]
    Corrupt(u64),
    #[error("chain config: {0}")]
    Config(String),
    #[error("chain export line {line}: {message}")]
    Export { line: usize, message: String },
    #[error(transparent)]
    Anchor(#[from] AnchorError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainConfig {
    #[serde(rename = "chainId")]
    pub chain_id: u64,
    /// Minimum simulated seconds between two seals.
    pub period: u64,
    pub sealers: Vec<String>,
    #[serde(rename = "maxTx")]
    pub max_tx_per_block: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            chain_id: 12345,
            period: 5,
            sealers: vec!["SEALER-A".into(), "SEALER-B".into()],
            max_tx_per_block: 8,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<(), AuditError> {
        if self.sealers.is_empty() {
            return Err(AuditError::Config("sealer set is empty".into()));
        }
        if self.period == 0 {
            return Err(AuditError::Config("period must be at least 1".into()));
        }
        if self.max_tx_per_block == 0 {
            return Err(AuditError::Config("maxTx must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditBlock {
    pub block_id: u64,
    pub chain_id: u64,
    pub prev_hash: Digest,
    pub timestamp: u64,
    pub sealer_id: String,
    pub transactions: Vec<AuditTransaction>,
    pub tx_root: Digest,
    pub block_hash: Digest,
}

#[derive(Serialize)]
struct HeaderRef<'a> {
    block_id: u64,
    chain_id: u64,
    prev_hash: &'a Digest,
    timestamp: u64,
    sealer_id: &'a str,
    tx_root: &'a Digest,
}

impl AuditBlock {
    /// Flat digest over the concatenated canonical transactions.
    pub fn compute_tx_root(transactions: &[AuditTransaction]) -> Digest {
        let encoded: Vec<Vec<u8>> = transactions.iter().map(|t| t.canonical_bytes()).collect();
        model::digest_concat(encoded.iter().map(Vec::as_slice))
    }

    /// Header digest, using the block's stored `tx_root`.
    pub fn compute_hash(&self) -> Digest {
        let header = HeaderRef {
            block_id: self.block_id,
            chain_id: self.chain_id,
            prev_hash: &self.prev_hash,
            timestamp: self.timestamp,
            sealer_id: &self.sealer_id,
            tx_root: &self.tx_root,
        };
        model::digest(&header.canonical_bytes())
    }

    pub fn decode(bytes: &[u8]) -> Option<AuditBlock> {
        model::from_bytes(bytes).ok()
    }

    /// Self-consistency of one stored block: decodes, re-encodes to the same
    /// bytes, and both digests recompute.
    pub fn check_stored(bytes: &[u8]) -> Result<AuditBlock, &'static str> {
        let block = Self::decode(bytes).ok_or("does not decode")?;
        if block.canonical_bytes() != bytes {
            return Err("non-canonical encoding");
        }
        if block.transactions.is_empty() {
            return Err("empty block");
        }
        if Self::compute_tx_root(&block.transactions) != block.tx_root {
            return Err("tx_root mismatch");
        }
        if block.compute_hash() != block.block_hash {
            return Err("block_hash mismatch");
        }
        Ok(block)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ChainCheck {
    Ok { height: u64 },
    FirstBad { height: u64, reason: String },
}

impl ChainCheck {
    pub fn is_ok(&self) -> bool {
        matches!(self, ChainCheck::Ok { .. })
    }

    pub fn first_bad(&self) -> Option<u64> {
        match self {
            ChainCheck::Ok { .. } => None,
            ChainCheck::FirstBad { height, .. } => Some(*height),
        }
    }
}

/// Walks stored blocks from genesis and reports the first inconsistency.
pub fn recompute_and_check(blocks: &[Vec<u8>]) -> ChainCheck {
    let mut prev = Digest::ZERO;
    for (h, bytes) in blocks.iter().enumerate() {
        let height = h as u64;
        let bad = |reason: &str| ChainCheck::FirstBad { height, reason: reason.to_string() };
        let block = match AuditBlock::check_stored(bytes) {
            Ok(b) => b,
            Err(reason) => return bad(reason),
        };
        if block.block_id != height {
            return bad("block_id does not match height");
        }
        if block.prev_hash != prev {
            return bad("prev_hash link broken");
        }
        if block.transactions.iter().any(|t| !t.compliance_status.is_terminal()) {
            return bad("pending transaction in sealed block");
        }
        prev = block.block_hash;
    }
    ChainCheck::Ok { height: blocks.len() as u64 }
}

/// Heights whose stored block hash differs from the anchored digest.
pub fn anchor_mismatches(blocks: &[Vec<u8>], registry: &AnchorRegistry) -> Vec<u64> {
    let mut out = Vec::new();
    for (h, bytes) in blocks.iter().enumerate() {
        let height = h as u64;
        let stored = AuditBlock::decode(bytes).map(|b| b.block_hash);
        match (stored, registry.lookup(&audit_key(height))) {
            (Some(s), Ok(a)) if s == a => {}
            _ => out.push(height),
        }
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ExportLine {
    height: u64,
    bytes: String,
    block: Option<AuditBlock>,
}

pub fn export_blocks_jsonl(blocks: &[Vec<u8>]) -> String {
    let mut out = String::new();
    for (h, bytes) in blocks.iter().enumerate() {
        let line = ExportLine { height: h as u64, bytes: hex::encode(bytes), block: AuditBlock::decode(bytes) };
        out.push_str(&serde_json::to_string(&line).expect("export lines serialize"));
        out.push('\n');
    }
    out
}

/// Reads the raw stored bytes back from a chain export. The decoded `block`
/// column is informational and ignored.
pub fn import_blocks_jsonl(text: &str) -> Result<Vec<Vec<u8>>, AuditError> {
    let mut blocks = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| AuditError::Export { line: i + 1, message };
        let parsed: ExportLine = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if parsed.height != blocks.len() as u64 {
            return Err(err(format!("expected height {}, found {}", blocks.len(), parsed.height)));
        }
        blocks.push(hex::decode(&parsed.bytes).map_err(|e| err(e.to_string()))?);
    }
    Ok(blocks)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrailFilter {
    Subject(String),
    Object(String),
    /// Inclusive height range.
    Blocks {
        from: u64,
        to: u64,
    },
}

#[derive(Debug, Clone)]
struct Pending {
    tx: AuditTransaction,
    enqueued_at: u64,
}

#[derive(Debug)]
pub struct AuditChain {
    config: ChainConfig,
    relay: AnchorRelay,
    pool: VecDeque<Pending>,
    blocks: Vec<Vec<u8>>,
    seal_hashes: Vec<Digest>,
    tx_index: BTreeMap<u64, u64>,
    last_seal: Option<u64>,
    next_sealer: usize,
    readers: BTreeSet<String>,
    replica_heads: BTreeMap<String, (u64, Digest)>,
}

impl AuditChain {
    pub fn new(config: ChainConfig, relay: AnchorRelay) -> Result<Self, AuditError> {
        config.validate()?;
        let replica_heads = config.sealers.iter().map(|s| (s.clone(), (0, Digest::ZERO))).collect();
        Ok(AuditChain {
            config,
            relay,
            pool: VecDeque::new(),
            blocks: Vec::new(),
            seal_hashes: Vec::new(),
            tx_index: BTreeMap::new(),
            last_seal: None,
            next_sealer: 0,
            readers: BTreeSet::new(),
            replica_heads,
        })
    }

    pub fn config(&self) -> &ChainConfig {
        &self.config
    }

    /// Queues a transaction; returns its pool position.
    pub fn submit(&mut self, tx: AuditTransaction, key: &VerifyingKey, at: u64) -> Result<usize, AuditError> {
        if tx.compliance_status != ComplianceStatus::Pending {
            return Err(AuditError::NonPendingStatus(tx.tx_id));
        }
        if !tx.verify_signature(key) {
            return Err(AuditError::BadSignature(tx.tx_id));
        }
        self.pool.push_back(Pending { tx, enqueued_at: at });
        Ok(self.pool.len() - 1)
    }

    /// Sets the terminal status of a pooled transaction, exactly once.
    pub fn set_status(&mut self, tx_id: u64, status: ComplianceStatus) -> Result<(), AuditError> {
        if !status.is_terminal() {
            return Err(AuditError::PendingStatus(tx_id));
        }
        let entry = self.pool.iter_mut().find(|p| p.tx.tx_id == tx_id).ok_or(AuditError::UnknownTx(tx_id))?;
        if entry.tx.compliance_status.is_terminal() {
            return Err(AuditError::AlreadyFinal(tx_id));
        }
        entry.tx.compliance_status = status;
        Ok(())
    }

    pub fn pending_len(&self) -> usize {
        self.pool.len()
    }

    fn resolved_prefix(&self) -> usize {
        self.pool.iter().take(self.config.max_tx_per_block).take_while(|p| p.tx.compliance_status.is_terminal()).count()
    }

    fn next_slot(&self) -> Option<u64> {
        if self.resolved_prefix() == 0 {
            return None;
        }
        let arrival = self.pool.front()?.enqueued_at;
        Some(match self.last_seal {
            None => arrival,
            Some(last) => (last + self.config.period).max(arrival),
        })
    }

    /// Seals one block at `now` if the period has elapsed and resolved
    /// transactions are waiting.
    pub fn seal_block(&mut self, now: u64) -> Result<Option<AuditBlock>, AuditError> {
        if self.last_seal.is_some_and(|last| now < last + self.config.period) {
            return Ok(None);
        }
        let n = self.resolved_prefix();
        if n == 0 {
            return Ok(None);
        }
        let transactions: Vec<AuditTransaction> = self.pool.drain(..n).map(|p| p.tx).collect();
        let block_id = self.blocks.len() as u64;
        let prev_hash = self.seal_hashes.last().copied().unwrap_or(Digest::ZERO);
        let sealer_id = self.config.sealers[self.next_sealer].clone();
        self.next_sealer = (self.next_sealer + 1) % self.config.sealers.len();
        let tx_root = AuditBlock::compute_tx_root(&transactions);
        let mut block = AuditBlock {
            block_id,
            chain_id: self.config.chain_id,
            prev_hash,
            timestamp: now,
            sealer_id,
            transactions,
            tx_root,
            block_hash: Digest::ZERO,
        };
        block.block_hash = block.compute_hash();
        self.relay.relay_anchor(&audit_key(block_id), block.block_hash, now)?;
        for tx in &block.transactions {
            self.tx_index.insert(tx.tx_id, block_id);
        }
        self.blocks.push(block.canonical_bytes());
        self.seal_hashes.push(block.block_hash);
        self.last_seal = Some(now);
        for head in self.replica_heads.values_mut() {
            *head = (block_id, block.block_hash);
        }
        Ok(Some(block))
    }

    /// Seals every block whose slot falls at or before `now`.
    pub fn seal_due(&mut self, now: u64) -> Result<Vec<AuditBlock>, AuditError> {
        let mut out = Vec::new();
        while let Some(slot) = self.next_slot() {
            if slot > now {
                break;
            }
            match self.seal_block(slot)? {
                Some(b) => out.push(b),
                None => break,
            }
        }
        Ok(out)
    }

    /// Seals all resolved transactions at successive future slots.
    pub fn flush(&mut self) -> Result<Vec<AuditBlock>, AuditError> {
        self.seal_due(u64::MAX)
    }

    pub fn add_replica(&mut self, node_id: &str) {
        let head = self.seal_hashes.last().map(|h| (self.seal_hashes.len() as u64 - 1, *h));
        self.replica_heads.insert(node_id.to_string(), head.unwrap_or((0, Digest::ZERO)));
    }

    pub fn replica_heads(&self) -> &BTreeMap<String, (u64, Digest)> {
        &self.replica_heads
    }

    pub fn grant_audit_read(&mut self, subject_id: &str) {
        self.readers.insert(subject_id.to_string());
    }

    pub fn get_trails(&self, caller: &str, filter: &TrailFilter) -> Result<Vec<AuditTransaction>, AuditError> {
        if !self.readers.contains(caller) {
            return Err(AuditError::Unauthorized(caller.to_string()));
        }
        let mut out = Vec::new();
        for (h, bytes) in self.blocks.iter().enumerate() {
            let h = h as u64;
            if let TrailFilter::Blocks { from, to } = filter {
                if h < *from || h > *to {
                    continue;
                }
            }
            let block = AuditBlock::decode(bytes).ok_or(AuditError::Corrupt(h))?;
            out.extend(block.transactions.into_iter().filter(|t| match filter {
                TrailFilter::Subject(s) => &t.subject_id == s,
                TrailFilter::Object(o) => &t.object_id == o,
                TrailFilter::Blocks { .. } => true,
            }));
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn raw_blocks(&self) -> &[Vec<u8>] {
        &self.blocks
    }

    pub fn block(&self, height: u64) -> Result<AuditBlock, AuditError> {
        let bytes = self.blocks.get(height as usize).ok_or(AuditError::UnknownBlock(height))?;
        AuditBlock::decode(bytes).ok_or(AuditError::Corrupt(height))
    }

    /// Hash computed when the block was sealed, independent of later tampering.
    pub fn seal_hash(&self, height: u64) -> Option<Digest> {
        self.seal_hashes.get(height as usize).copied()
    }

    pub fn head_hash(&self) -> Digest {
        self.seal_hashes.last().copied().unwrap_or(Digest::ZERO)
    }

    pub fn block_of(&self, tx_id: u64) -> Option<u64> {
        self.tx_index.get(&tx_id).copied()
    }

    pub fn committed_count(&self) -> usize {
        self.tx_index.len()
    }

    pub fn check(&self) -> ChainCheck {
        recompute_and_check(&self.blocks)
    }

    pub fn export_jsonl(&self) -> String {
        export_blocks_jsonl(&self.blocks)
    }

    /// Flips one bit of the stored bytes of a sealed block.
    pub fn tamper_bit(&mut self, height: u64, byte: usize, bit: u8) -> Result<(), AuditError> {
        let block = self.blocks.get_mut(height as usize).ok_or(AuditError::UnknownBlock(height))?;
        let len = block.len();
        let b = block.get_mut(byte).ok_or(AuditError::OutOfRange { height, byte, len })?;
        *b ^= 1 << (bit % 8);
        Ok(())
    }

    /// Replaces a stored block wholesale. Used to model a splice attack.
    pub fn replace_block(&mut self, height: u64, bytes: Vec<u8>) -> Result<(), AuditError> {
        let slot = self.blocks.get_mut(height as usize).ok_or(AuditError::UnknownBlock(height))?;
        *slot = bytes;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{keypair_for, AccessRequest, EnvironmentContext, OperationKind};

    fn tx(id: u64, subject: &str) -> (AuditTransaction, VerifyingKey) {
        let (sk, pk) = keypair_for(subject);
        let env = EnvironmentContext::at(1_709_542_800 + id, "WARD-A", "10.0.0.1", false);
        let req = AccessRequest::signed(&sk, subject, OperationKind::Read, "PT1001/HR1005", env, Default::default());
        (AuditTransaction::from_elements(id, req.elements(), req.signature), pk)
    }

    fn chain(period: u64, sealers: &[&str]) -> (AuditChain, std::sync::Arc<AnchorRegistry>) {
        let reg = AnchorRegistry::new();
        let cfg =
            ChainConfig { period, sealers: sealers.iter().map(|s| s.to_string()).collect(), ..Default::default() };
        (AuditChain::new(cfg, AnchorRelay::new(reg.clone())).unwrap(), reg)
    }

    fn commit(c: &mut AuditChain, n: u64, at: u64) {
        for i in 0..n {
            let (t, pk) = tx(i, if i % 2 == 0 { "PR1001" } else { "PR1002" });
            c.submit(t, &pk, at).unwrap();
            c.set_status(i, ComplianceStatus::Compliant).unwrap();
        }
    }

    #[test]
    fn submit_positions_are_fifo() {
        let (mut c, _) = chain(5, &["A"]);
        for i in 0..3 {
            let (t, pk) = tx(i, "PR1001");
            assert_eq!(c.submit(t, &pk, 0).unwrap(), i as usize);
        }
    }

    #[test]
    fn submit_guards() {
        let (mut c, _) = chain(5, &["A"]);
        let (mut t, pk) = tx(1, "PR1001");
        t.compliance_status = ComplianceStatus::Compliant;
        assert_eq!(c.submit(t.clone(), &pk, 0), Err(AuditError::NonPendingStatus(1)));
        t.compliance_status = ComplianceStatus::Pending;
        let (_, other) = keypair_for("PR1002");
        assert_eq!(c.submit(t, &other, 0), Err(AuditError::BadSignature(1)));
    }

    #[test]
    fn status_is_set_once() {
        let (mut c, _) = chain(5, &["A"]);
        let (t, pk) = tx(1, "PR1001");
        c.submit(t, &pk, 0).unwrap();
        c.set_status(1, ComplianceStatus::Compliant).unwrap();
        assert_eq!(c.set_status(1, ComplianceStatus::Noncompliant), Err(AuditError::AlreadyFinal(1)));
        assert_eq!(c.set_status(9, ComplianceStatus::Compliant), Err(AuditError::UnknownTx(9)));
    }

    #[test]
    fn pending_transactions_are_not_sealed() {
        let (mut c, _) = chain(5, &["A"]);
        let (t, pk) = tx(1, "PR1001");
        c.submit(t, &pk, 0).unwrap();
        assert!(c.seal_block(100).unwrap().is_none());
    }

    #[test]
    fn drain_all_under_capacity() {
        let (mut c, reg) = chain(5, &["A"]);
        commit(&mut c, 3, 0);
        let b = c.seal_block(0).unwrap().unwrap();
        assert_eq!(b.transactions.len(), 3);
        assert_eq!(b.prev_hash, Digest::ZERO);
        assert_eq!(reg.lookup("audit:0").unwrap(), b.block_hash);
        assert!(c.seal_block(10).unwrap().is_none());
    }

    #[test]
    fn batches_of_eight_across_periods() {
        let (mut c, _) = chain(5, &["A"]);
        commit(&mut c, 20, 0);
        assert_eq!(c.seal_block(0).unwrap().unwrap().transactions.len(), 8);
        assert!(c.seal_block(4).unwrap().is_none(), "period not elapsed");
        assert_eq!(c.seal_block(5).unwrap().unwrap().transactions.len(), 8);
        assert_eq!(c.seal_block(10).unwrap().unwrap().transactions.len(), 4);
        assert!(c.check().is_ok());
    }

    #[test]
    fn seal_due_respects_slots() {
        let (mut c, _) = chain(5, &["A"]);
        commit(&mut c, 20, 100);
        let sealed = c.seal_due(107).unwrap();
        assert_eq!(sealed.iter().map(|b| b.timestamp).collect::<Vec<_>>(), vec![100, 105]);
        let rest = c.flush().unwrap();
        assert_eq!(rest.len(), 1);
        assert_eq!(rest[0].timestamp, 110);
    }

    #[test]
    fn sealers_rotate() {
        let (mut c, _) = chain(1, &["A", "B"]);
        let mut seen = Vec::new();
        for i in 0..4u64 {
            let (t, pk) = tx(i, "PR1001");
            c.submit(t, &pk, i).unwrap();
            c.set_status(i, ComplianceStatus::Compliant).unwrap();
            seen.push(c.seal_block(i).unwrap().unwrap().sealer_id);
        }
        assert_eq!(seen, ["A", "B", "A", "B"]);
        assert_eq!(c.replica_heads()["A"], (3, c.head_hash()));
    }

    #[test]
    fn trails_require_capability() {
        let (mut c, _) = chain(1, &["A"]);
        assert_eq!(
            c.get_trails("AUD", &TrailFilter::Subject("PR1001".into())),
            Err(AuditError::Unauthorized("AUD".into()))
        );
        c.grant_audit_read("AUD");
        assert!(c.get_trails("AUD", &TrailFilter::Subject("PR1001".into())).unwrap().is_empty());
        commit(&mut c, 10, 0);
        c.flush().unwrap();
        let mine = c.get_trails("AUD", &TrailFilter::Subject("PR1001".into())).unwrap();
        assert_eq!(mine.iter().map(|t| t.tx_id).collect::<Vec<_>>(), vec![0, 2, 4, 6, 8]);
        let first = c.get_trails("AUD", &TrailFilter::Blocks { from: 0, to: 0 }).unwrap();
        assert_eq!(first.len(), 8);
    }

    #[test]
    fn bit_flip_is_localised() {
        let (mut c, _) = chain(1, &["A"]);
        commit(&mut c, 80, 0);
        c.flush().unwrap();
        assert_eq!(c.len(), 10);
        assert!(c.check().is_ok());
        let len = c.raw_blocks()[4].len();
        c.tamper_bit(4, len / 2, 3).unwrap();
        assert_eq!(c.check().first_bad(), Some(4));
    }

    #[test]
    fn splice_passes_internally_but_not_against_anchor() {
        let (mut c, reg) = chain(1, &["A"]);
        commit(&mut c, 80, 0);
        c.flush().unwrap();
        // Rebuild block 7 with a different status and a recomputed hash.
        let mut b = c.block(7).unwrap();
        b.transactions[0].compliance_status = ComplianceStatus::Noncompliant;
        b.tx_root = AuditBlock::compute_tx_root(&b.transactions);
        b.block_hash = b.compute_hash();
        c.replace_block(7, b.canonical_bytes()).unwrap();
        // The successor still links to the old hash, so the walk stops at 8;
        // the anchor comparison pins the splice to 7.
        assert_eq!(c.check().first_bad(), Some(8));
        assert_eq!(anchor_mismatches(c.raw_blocks(), &reg), vec![7]);
    }

    #[test]
    fn export_round_trip() {
        let (mut c, _) = chain(1, &["A"]);
        commit(&mut c, 10, 0);
        c.flush().unwrap();
        let text = c.export_jsonl();
        assert_eq!(import_blocks_jsonl(&text).unwrap(), c.raw_blocks());
    }

    #[test]
    fn config_rejects_empty_sealers() {
        let cfg = ChainConfig { sealers: vec![], ..Default::default() };
        assert!(matches!(cfg.validate(), Err(AuditError::Config(_))));
        let genesis = serde_json::to_value(ChainConfig::default()).unwrap();
        assert_eq!(genesis["chainId"], 12345);
        assert_eq!(genesis["maxTx"], 8);
    }
}
