//! Fixture tables: one JSON object per line.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;

use super::ScenarioError;
use crate::model::{keypair_for, HealthRecordDescriptor, SubjectProfile, VerifyingKey};
use crate::policy::{Policy, PolicyEngine, Registration};

pub const SUBJECT_FILES: [&str; 5] =
    ["patients.jsonl", "emergency_contacts.jsonl", "providers.jsonl", "pharmacists.jsonl", "insurance_agents.jsonl"];
pub const RECORD_FILE: &str = "records.jsonl";
pub const POLICY_FILE: &str = "policies.jsonl";

#[derive(Debug, Clone, Default)]
pub struct FixtureSet {
    pub subjects: Vec<SubjectProfile>,
    pub records: Vec<HealthRecordDescriptor>,
    pub policies: Vec<Policy>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadSummary {
    pub subjects: usize,
    pub records: usize,
    pub policies: usize,
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ScenarioError> {
    let file = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    let text = fs::read_to_string(path).map_err(|e| ScenarioError::SchemaViolation {
        file: file.clone(),
        line: 0,
        message: format!("cannot read: {e}"),
    })?;
    parse_jsonl(&file, &text)
}

pub fn parse_jsonl<T: DeserializeOwned>(file: &str, text: &str) -> Result<Vec<T>, ScenarioError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(line).map_err(|e| ScenarioError::SchemaViolation {
            file: file.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

impl FixtureSet {
    /// Reads all tables from `dir`. Public keys are derived from subject ids.
    pub fn read(dir: &Path) -> Result<Self, ScenarioError> {
        let mut set = FixtureSet::default();
        for f in SUBJECT_FILES {
            let mut rows: Vec<SubjectProfile> = read_jsonl(&dir.join(f))?;
            for (i, s) in rows.iter_mut().enumerate() {
                s.validate().map_err(|message| ScenarioError::SchemaViolation {
                    file: f.to_string(),
                    line: i + 1,
                    message,
                })?;
                if s.public_key == VerifyingKey::default() {
                    s.public_key = keypair_for(&s.subject_id).1;
                }
            }
            set.subjects.extend(rows);
        }
        set.records = read_jsonl(&dir.join(RECORD_FILE))?;
        set.policies = read_jsonl(&dir.join(POLICY_FILE))?;
        Ok(set)
    }

    /// Registers everything through the administration point, plus the
    /// audit-trail object.
    pub fn register(&self, engine: &mut PolicyEngine) -> Result<LoadSummary, ScenarioError> {
        let reg = |file: &str, line: usize, r: Result<_, crate::policy::PolicyError>| {
            r.map(|_| ()).map_err(|e| ScenarioError::SchemaViolation {
                file: file.to_string(),
                line,
                message: e.to_string(),
            })
        };
        for (i, s) in self.subjects.iter().enumerate() {
            reg("subjects", i + 1, engine.pcap_register(Registration::Subject(s.clone())))?;
        }
        for (i, r) in self.records.iter().enumerate() {
            reg(RECORD_FILE, i + 1, engine.pcap_register(Registration::Record(r.clone())))?;
        }
        reg(RECORD_FILE, 0, engine.pcap_register(Registration::AuditTrail))?;
        for (i, p) in self.policies.iter().enumerate() {
            reg(POLICY_FILE, i + 1, engine.pcap_register(Registration::Policy(p.clone())))?;
        }
        Ok(LoadSummary { subjects: self.subjects.len(), records: self.records.len(), policies: self.policies.len() })
    }
}

pub fn load_fixtures(dir: &Path, engine: &mut PolicyEngine) -> Result<LoadSummary, ScenarioError> {
    FixtureSet::read(dir)?.register(engine)
}

#[cfg(test)]
pub(crate) mod tests_support {
    use std::path::PathBuf;

    use super::*;
    use crate::anchor::AnchorRegistry;

    pub fn shipped_dir() -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
    }

    /// Engine with the shipped population registered at scenario start.
    pub fn shipped_engine() -> PolicyEngine {
        let mut engine = PolicyEngine::new(AnchorRegistry::new());
        engine.set_time(crate::scenario::SCENARIO_START as u64);
        load_fixtures(&shipped_dir(), &mut engine).unwrap();
        engine
    }
}
