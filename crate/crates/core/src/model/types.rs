//! Shared domain types.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Datelike, NaiveDate, NaiveTime, Weekday};
use serde::{Deserialize, Serialize};

use super::canonical::Canonical;
use super::crypto::{self, Signature, SigningKey, VerifyingKey};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Role {
    Doc,
    Nrs,
    Stf,
    Blo,
    Rlt,
    Plt,
    Emc,
    Phr,
    Ina,
    Patient,
}

impl Role {
    /// The nine treatment-team slots, in roster order.
    pub const TEAM: [Role; 9] =
        [Role::Doc, Role::Nrs, Role::Stf, Role::Blo, Role::Rlt, Role::Plt, Role::Emc, Role::Phr, Role::Ina];

    /// Hospital staff; these must carry a training expiry.
    pub fn is_provider(self) -> bool {
        matches!(self, Role::Doc | Role::Nrs | Role::Stf | Role::Blo | Role::Rlt | Role::Plt)
    }

    pub fn code(self) -> &'static str {
        match self {
            Role::Doc => "DOC",
            Role::Nrs => "NRS",
            Role::Stf => "STF",
            Role::Blo => "BLO",
            Role::Rlt => "RLT",
            Role::Plt => "PLT",
            Role::Emc => "EMC",
            Role::Phr => "PHR",
            Role::Ina => "INA",
            Role::Patient => "PATIENT",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let all = Role::TEAM.iter().copied().chain([Role::Patient]);
        all.into_iter().find(|r| r.code() == s).ok_or_else(|| format!("unknown role `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum OperationKind {
    Read,
    Write,
    Update,
}

impl OperationKind {
    pub const ALL: [OperationKind; 3] = [OperationKind::Read, OperationKind::Write, OperationKind::Update];

    pub fn code(self) -> &'static str {
        match self {
            OperationKind::Read => "READ",
            OperationKind::Write => "WRITE",
            OperationKind::Update => "UPDATE",
        }
    }
}

impl fmt::Display for OperationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub subject_id: String,
    pub display_name: String,
    pub role: Role,
    pub date_of_birth: NaiveDate,
    pub phone: String,
    pub email: String,
    #[serde(default)]
    pub training_expiry: Option<NaiveDate>,
    /// Filled by the fixture loader when absent from the source row.
    #[serde(default)]
    pub public_key: VerifyingKey,
    #[serde(default)]
    pub gender: Option<String>,
    #[serde(default)]
    pub title: Option<String>,
    #[serde(default)]
    pub organization: Option<String>,
    /// For emergency contacts: the patient who registered them.
    #[serde(default)]
    pub linked_patient_id: Option<String>,
    #[serde(default)]
    pub relationship: Option<String>,
}

impl SubjectProfile {
    /// Checks the per-role schema rules.
    pub fn validate(&self) -> Result<(), String> {
        if self.subject_id.is_empty() {
            return Err("subject_id is empty".into());
        }
        if self.role.is_provider() && self.training_expiry.is_none() {
            return Err(format!("provider {} has no training_expiry", self.subject_id));
        }
        if self.role == Role::Emc && self.linked_patient_id.is_none() {
            return Err(format!("emergency contact {} has no linked_patient_id", self.subject_id));
        }
        Ok(())
    }

    /// True when training lapsed before `on`.
    pub fn training_expired(&self, on: NaiveDate) -> bool {
        self.training_expiry.is_some_and(|d| d < on)
    }
}

/// Object identifiers qualify the record number with its owner, since every
/// patient has an HR1001..HR1010 set.
pub type ObjectId = String;

/// The audit trail itself, addressable as an object so policies can guard it.
pub const AUDIT_TRAIL_OBJECT: &str = "AUDIT-TRAIL";

pub fn object_id(patient_id: &str, record_id: &str) -> ObjectId {
    format!("{patient_id}/{record_id}")
}

/// Splits `PT1001/HR1005` into its owner and record parts.
pub fn split_object_id(object_id: &str) -> Option<(&str, &str)> {
    object_id.split_once('/')
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HealthRecordDescriptor {
    pub record_id: String,
    pub record_name: String,
    pub owner_patient_id: String,
    pub sensitivity_class: String,
}

impl HealthRecordDescriptor {
    pub const RECORD_IDS: [&'static str; 10] =
        ["HR1001", "HR1002", "HR1003", "HR1004", "HR1005", "HR1006", "HR1007", "HR1008", "HR1009", "HR1010"];

    pub fn object_id(&self) -> ObjectId {
        object_id(&self.owner_patient_id, &self.record_id)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !Self::RECORD_IDS.contains(&self.record_id.as_str()) {
            return Err(format!("record_id `{}` outside HR1001..HR1010", self.record_id));
        }
        if self.owner_patient_id.is_empty() {
            return Err("owner_patient_id is empty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DayOfWeek {
    Monday,
    Tuesday,
    Wednesday,
    Thursday,
    Friday,
    Saturday,
    Sunday,
}

impl From<Weekday> for DayOfWeek {
    fn from(w: Weekday) -> Self {
        match w {
            Weekday::Mon => DayOfWeek::Monday,
            Weekday::Tue => DayOfWeek::Tuesday,
            Weekday::Wed => DayOfWeek::Wednesday,
            Weekday::Thu => DayOfWeek::Thursday,
            Weekday::Fri => DayOfWeek::Friday,
            Weekday::Sat => DayOfWeek::Saturday,
            Weekday::Sun => DayOfWeek::Sunday,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvironmentContext {
    pub wall_clock: u64,
    pub calendar_date: NaiveDate,
    pub day_of_week: DayOfWeek,
    pub location_tag: String,
    pub source_ip: String,
    pub emergency_flag: bool,
}

impl EnvironmentContext {
    /// Builds a context whose date fields are derived from `wall_clock` (UTC).
    pub fn at(wall_clock: u64, location_tag: &str, source_ip: &str, emergency_flag: bool) -> Self {
        let dt = utc(wall_clock);
        EnvironmentContext {
            wall_clock,
            calendar_date: dt.date(),
            day_of_week: dt.weekday().into(),
            location_tag: location_tag.to_string(),
            source_ip: source_ip.to_string(),
            emergency_flag,
        }
    }

    pub fn time_of_day(&self) -> NaiveTime {
        utc(self.wall_clock).time()
    }

    /// True when the date fields agree with `wall_clock`.
    pub fn is_consistent(&self) -> bool {
        let dt = utc(self.wall_clock);
        self.calendar_date == dt.date() && self.day_of_week == DayOfWeek::from(dt.weekday())
    }
}

fn utc(secs: u64) -> chrono::NaiveDateTime {
    let secs = i64::try_from(secs).unwrap_or(i64::MAX);
    DateTime::from_timestamp(secs, 0).map(|d| d.naive_utc()).unwrap_or_default()
}

/// Seconds since the epoch for a UTC date and time.
pub fn epoch_seconds(date: NaiveDate, time: NaiveTime) -> u64 {
    let ts = date.and_time(time).and_utc().timestamp();
    u64::try_from(ts).unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Condition {
    /// Half-open clock interval `[start, end)`.
    TimeWindow {
        start: NaiveTime,
        end: NaiveTime,
    },
    /// Inclusive on both ends.
    DateRange {
        start: NaiveDate,
        end: NaiveDate,
    },
    DaySet {
        days: BTreeSet<DayOfWeek>,
    },
    LocationSet {
        locations: BTreeSet<String>,
    },
    IpAllowList {
        addresses: BTreeSet<String>,
    },
    AccessFrequencyLimit {
        max: u32,
    },
}

impl Condition {
    pub fn validate(&self) -> Result<(), String> {
        match self {
            Condition::TimeWindow { start, end } if start >= end => Err("time window start must precede end".into()),
            Condition::DateRange { start, end } if start > end => Err("date range start after end".into()),
            Condition::DaySet { days } if days.is_empty() => Err("empty day set".into()),
            Condition::LocationSet { locations } if locations.is_empty() => Err("empty location set".into()),
            Condition::IpAllowList { addresses } if addresses.is_empty() => Err("empty ip allow list".into()),
            Condition::AccessFrequencyLimit { max: 0 } => Err("frequency limit must be at least 1".into()),
            _ => Ok(()),
        }
    }

    /// Checks the environment-based kinds. Frequency limits need usage state
    /// and always pass here.
    pub fn check(&self, env: &EnvironmentContext) -> Result<(), &'static str> {
        let ok = match self {
            Condition::TimeWindow { start, end } => {
                let t = env.time_of_day();
                *start <= t && t < *end
            }
            Condition::DateRange { start, end } => *start <= env.calendar_date && env.calendar_date <= *end,
            Condition::DaySet { days } => days.contains(&env.day_of_week),
            Condition::LocationSet { locations } => locations.contains(&env.location_tag),
            Condition::IpAllowList { addresses } => addresses.contains(&env.source_ip),
            Condition::AccessFrequencyLimit { .. } => true,
        };
        if ok {
            Ok(())
        } else {
            Err(self.label())
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Condition::TimeWindow { .. } => "time window",
            Condition::DateRange { .. } => "date range",
            Condition::DaySet { .. } => "day of week",
            Condition::LocationSet { .. } => "location",
            Condition::IpAllowList { .. } => "source ip",
            Condition::AccessFrequencyLimit { .. } => "access frequency",
        }
    }
}

/// Environment and attributes as they stood when a decision was made.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionsSnapshot {
    pub environment: EnvironmentContext,
    pub presented_attributes: BTreeMap<String, String>,
}

/// The five elements that identify one access: what is signed at ingress and
/// what the audit trail records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessElements {
    pub subject_id: String,
    pub operation: OperationKind,
    pub object_id: ObjectId,
    pub conditions_snapshot: Option<ConditionsSnapshot>,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessRequest {
    pub subject_id: String,
    pub operation: OperationKind,
    pub object_id: ObjectId,
    pub environment: EnvironmentContext,
    pub presented_attributes: BTreeMap<String, String>,
    pub signature: Signature,
}

impl AccessRequest {
    pub fn signed(
        key: &SigningKey,
        subject_id: &str,
        operation: OperationKind,
        object_id: &str,
        environment: EnvironmentContext,
        presented_attributes: BTreeMap<String, String>,
    ) -> Self {
        let mut req = AccessRequest {
            subject_id: subject_id.to_string(),
            operation,
            object_id: object_id.to_string(),
            environment,
            presented_attributes,
            signature: Signature::default(),
        };
        req.signature = crypto::sign(key, &req.elements().canonical_bytes());
        req
    }

    pub fn elements(&self) -> AccessElements {
        AccessElements {
            subject_id: self.subject_id.clone(),
            operation: self.operation,
            object_id: self.object_id.clone(),
            conditions_snapshot: Some(ConditionsSnapshot {
                environment: self.environment.clone(),
                presented_attributes: self.presented_attributes.clone(),
            }),
            timestamp: self.environment.wall_clock,
        }
    }

    pub fn verify(&self, key: &VerifyingKey) -> bool {
        crypto::verify(key, &self.elements().canonical_bytes(), &self.signature)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Permit,
    Deny,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ObligationKind {
    NotifyPatient,
    NotifyEmergencyContact,
    ShareClaimInfo,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Obligation {
    pub kind: ObligationKind,
    pub target_subject_id: String,
    pub triggering_policy_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessDecision {
    pub verdict: Verdict,
    pub matched_policy_ids: Vec<String>,
    pub matched_consent_ids: Vec<String>,
    pub obligations: Vec<Obligation>,
    pub reason: String,
}

impl AccessDecision {
    pub fn deny(reason: impl Into<String>) -> Self {
        AccessDecision {
            verdict: Verdict::Deny,
            matched_policy_ids: Vec::new(),
            matched_consent_ids: Vec::new(),
            obligations: Vec::new(),
            reason: reason.into(),
        }
    }

    pub fn is_permit(&self) -> bool {
        self.verdict == Verdict::Permit
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::canonical::to_bytes;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn t(s: &str) -> NaiveTime {
        s.parse().unwrap()
    }

    pub(crate) fn jordan() -> SubjectProfile {
        SubjectProfile {
            subject_id: "PT1001".into(),
            display_name: "Jordan".into(),
            role: Role::Patient,
            date_of_birth: d("1980-11-25"),
            phone: "+15306524342".into(),
            email: "jordam@compliance.com".into(),
            training_expiry: None,
            public_key: crypto::keypair_for("PT1001").1,
            gender: Some("M".into()),
            title: None,
            organization: None,
            linked_patient_id: None,
            relationship: None,
        }
    }

    #[test]
    fn profiles_differing_in_email_encode_differently() {
        let a = jordan();
        let mut b = jordan();
        b.email = "other@compliance.com".into();
        assert_ne!(to_bytes(&a).unwrap(), to_bytes(&b).unwrap());
        assert_eq!(to_bytes(&a).unwrap(), to_bytes(&a.clone()).unwrap());
    }

    #[test]
    fn environment_fields_follow_the_clock() {
        // 2024-03-04 09:30:00 UTC, a Monday.
        let ts = epoch_seconds(d("2024-03-04"), t("09:30:00"));
        let env = EnvironmentContext::at(ts, "WARD-A", "10.0.0.1", false);
        assert_eq!(env.calendar_date, d("2024-03-04"));
        assert_eq!(env.day_of_week, DayOfWeek::Monday);
        assert_eq!(env.time_of_day(), t("09:30:00"));
        assert!(env.is_consistent());
        let mut bad = env.clone();
        bad.day_of_week = DayOfWeek::Sunday;
        assert!(!bad.is_consistent());
    }

    #[test]
    fn office_hours_window_is_half_open() {
        let w = Condition::TimeWindow { start: t("08:00:00"), end: t("17:00:00") };
        let at = |hms: &str| EnvironmentContext::at(epoch_seconds(d("2024-03-04"), t(hms)), "", "", false);
        assert!(w.check(&at("09:30:00")).is_ok());
        assert!(w.check(&at("08:00:00")).is_ok());
        assert_eq!(w.check(&at("17:00:00")), Err("time window"));
        assert_eq!(w.check(&at("17:30:00")), Err("time window"));
    }

    #[test]
    fn condition_schema_rules() {
        assert!(Condition::AccessFrequencyLimit { max: 0 }.validate().is_err());
        assert!(Condition::TimeWindow { start: t("10:00:00"), end: t("09:00:00") }.validate().is_err());
        assert!(Condition::DaySet { days: BTreeSet::new() }.validate().is_err());
        assert!(Condition::AccessFrequencyLimit { max: 5 }.validate().is_ok());
    }

    #[test]
    fn condition_json_shape() {
        let c: Condition = serde_json::from_str(r#"{"TIME_WINDOW":{"start":"08:00:00","end":"17:00:00"}}"#).unwrap();
        assert_eq!(c, Condition::TimeWindow { start: t("08:00:00"), end: t("17:00:00") });
        let f: Condition = serde_json::from_str(r#"{"ACCESS_FREQUENCY_LIMIT":{"max":5}}"#).unwrap();
        assert_eq!(f, Condition::AccessFrequencyLimit { max: 5 });
    }

    #[test]
    fn provider_without_training_is_rejected() {
        let mut p = jordan();
        p.role = Role::Doc;
        assert!(p.validate().is_err());
        p.training_expiry = Some(d("2025-01-31"));
        assert!(p.validate().is_ok());
        assert!(p.training_expired(d("2025-02-01")));
        assert!(!p.training_expired(d("2025-01-31")));
    }

    #[test]
    fn request_signature_covers_elements() {
        let (sk, pk) = crypto::keypair_for("PR1001");
        let env = EnvironmentContext::at(1_709_542_800, "WARD-A", "10.0.0.1", false);
        let req = AccessRequest::signed(&sk, "PR1001", OperationKind::Read, "PT1001/HR1005", env, BTreeMap::new());
        assert!(req.verify(&pk));
        let mut forged = req.clone();
        forged.object_id = "PT1001/HR1006".into();
        assert!(!forged.verify(&pk));
    }

    #[test]
    fn object_ids_split() {
        assert_eq!(split_object_id("PT1001/HR1005"), Some(("PT1001", "HR1005")));
        assert_eq!(split_object_id(AUDIT_TRAIL_OBJECT), None);
    }
}
