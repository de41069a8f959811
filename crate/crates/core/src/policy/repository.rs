//! Attribute and policy repositories.
//!
//! Entries are versioned by the global logical stamp at which they were
//! written, so any past state can be read back.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::rules::Policy;
use crate::model::{HealthRecordDescriptor, ObjectId, Role, SubjectProfile, AUDIT_TRAIL_OBJECT};

#[derive(Debug, Clone)]
pub struct Versioned<T> {
    entries: BTreeMap<String, Vec<(u64, T)>>,
}

impl<T> Default for Versioned<T> {
    fn default() -> Self {
        Versioned { entries: BTreeMap::new() }
    }
}

impl<T> Versioned<T> {
    /// Appends a version; returns the 1-based version number.
    pub fn push(&mut self, id: &str, seq: u64, value: T) -> usize {
        let versions = self.entries.entry(id.to_string()).or_default();
        versions.push((seq, value));
        versions.len()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    pub fn latest(&self, id: &str) -> Option<&T> {
        self.entries.get(id).and_then(|v| v.last()).map(|(_, t)| t)
    }

    /// The version written strictly before `as_of`.
    pub fn as_of(&self, id: &str, as_of: u64) -> Option<&T> {
        self.entries.get(id)?.iter().rev().find(|(s, _)| *s < as_of).map(|(_, t)| t)
    }

    pub fn iter_as_of(&self, as_of: u64) -> impl Iterator<Item = &T> {
        self.entries.values().filter_map(move |v| v.iter().rev().find(|(s, _)| *s < as_of).map(|(_, t)| t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ObjectEntry {
    HealthRecord(HealthRecordDescriptor),
    /// The audit log as a guarded object.
    AuditTrail,
}

impl ObjectEntry {
    pub fn object_id(&self) -> ObjectId {
        match self {
            ObjectEntry::HealthRecord(r) => r.object_id(),
            ObjectEntry::AuditTrail => AUDIT_TRAIL_OBJECT.to_string(),
        }
    }

    /// Name that policy record selectors match against.
    pub fn record_key(&self) -> &str {
        match self {
            ObjectEntry::HealthRecord(r) => &r.record_id,
            ObjectEntry::AuditTrail => AUDIT_TRAIL_OBJECT,
        }
    }

    pub fn owner(&self) -> Option<&str> {
        match self {
            ObjectEntry::HealthRecord(r) => Some(&r.owner_patient_id),
            ObjectEntry::AuditTrail => None,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct AttributeRepository {
    pub subjects: Versioned<SubjectProfile>,
    pub objects: Versioned<ObjectEntry>,
}

impl AttributeRepository {
    pub fn subject(&self, id: &str, as_of: u64) -> Option<&SubjectProfile> {
        self.subjects.as_of(id, as_of)
    }

    pub fn object(&self, id: &str, as_of: u64) -> Option<&ObjectEntry> {
        self.objects.as_of(id, as_of)
    }

    /// The emergency contact a patient registered, lowest id first.
    pub fn emergency_contact_of(&self, patient_id: &str, as_of: u64) -> Option<&SubjectProfile> {
        self.subjects
            .iter_as_of(as_of)
            .find(|s| s.role == Role::Emc && s.linked_patient_id.as_deref() == Some(patient_id))
    }

    pub fn subjects_with_role(&self, role: Role, as_of: u64) -> Vec<String> {
        self.subjects.iter_as_of(as_of).filter(|s| s.role == role).map(|s| s.subject_id.clone()).collect()
    }
}

#[derive(Debug, Clone, Default)]
pub struct PolicyRepository {
    pub policies: Versioned<Policy>,
}

impl PolicyRepository {
    /// Policies in effect at `as_of`, highest priority first.
    pub fn active(&self, as_of: u64) -> Vec<&Policy> {
        let mut v: Vec<&Policy> = self.policies.iter_as_of(as_of).collect();
        v.sort_by_key(|p| p.sort_key());
        v
    }
}
