#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Arc;

use consentledger_core::anchor::AnchorRegistry;
use consentledger_core::model::{OperationKind, Role};
use consentledger_core::policy::PolicyEngine;
use consentledger_core::scenario::{FixtureSet, RunConfig, SCENARIO_START};

pub const PATIENT: &str = "PT1001";

/// Record, then who may read, write and update it, exactly as tabulated.
pub const PERMISSION_MATRIX: [(&str, &str, &str, &str); 10] = [
    ("HR1001", "Patient, Doctor, Support Staff, EC", "Patient, Support Staff", "Patient, Support Staff"),
    ("HR1002", "Doctor, Patient", "Patient, Doctor", "Patient, Doctor"),
    ("HR1003", "Doctor, Patient, Patho Lab Tech", "Patho Lab Tech", "Patho Lab Tech"),
    ("HR1004", "Doctor, Patient, Nurse", "Patient, Patho Lab Tech", "Patient, Patho Lab Tech"),
    ("HR1005", "Doctor, Nurse, Patient, EC", "Doctor", "Doctor"),
    ("HR1006", "Doctor, Patient, Nurse, Pharmacist, Insurance Agent, EC", "Doctor", "Doctor"),
    ("HR1007", "Patho Lab Tech, Doctor, Patient, EC", "Patho Lab Tech", "Patho Lab Tech"),
    ("HR1008", "Radio Lab Tech, Doctor, Patient, EC", "Radio Lab Tech", "Radio Lab Tech"),
    ("HR1009", "Patient, Billing Officer, Insurance Agent", "Billing Officer, Patient", "Billing Officer, Patient"),
    (
        "HR1010",
        "Patient, Billing Officer, Insurance Agent",
        "Billing Officer, Insurance Agent",
        "Billing Officer, Insurance Agent",
    ),
];

pub const MATRIX_ROLES: [Role; 10] =
    [Role::Patient, Role::Doc, Role::Nrs, Role::Stf, Role::Blo, Role::Rlt, Role::Plt, Role::Emc, Role::Phr, Role::Ina];

fn role_named(name: &str) -> Role {
    match name {
        "Patient" => Role::Patient,
        "Doctor" => Role::Doc,
        "Nurse" => Role::Nrs,
        "Support Staff" => Role::Stf,
        "EC" => Role::Emc,
        "Patho Lab Tech" => Role::Plt,
        "Radio Lab Tech" => Role::Rlt,
        "Pharmacist" => Role::Phr,
        "Insurance Agent" => Role::Ina,
        "Billing Officer" => Role::Blo,
        other => panic!("unknown role name {other}"),
    }
}

/// The 66 permitted (role, record, operation) cells.
pub fn matrix_oracle() -> BTreeSet<(Role, String, OperationKind)> {
    let mut out = BTreeSet::new();
    for (record, read, write, update) in PERMISSION_MATRIX {
        for (op, cell) in [(OperationKind::Read, read), (OperationKind::Write, write), (OperationKind::Update, update)]
        {
            for name in cell.split(',') {
                out.insert((role_named(name.trim()), record.to_string(), op));
            }
        }
    }
    out
}

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

pub fn fixtures() -> FixtureSet {
    FixtureSet::read(&fixtures_dir()).expect("shipped fixtures load")
}

/// Shipped scenario names and their scripts, in name order.
pub fn shipped_scenarios() -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = std::fs::read_dir(scenarios_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .map(|p| (p.file_stem().unwrap().to_string_lossy().into_owned(), std::fs::read_to_string(&p).unwrap()))
        .collect();
    out.sort();
    out
}

pub fn scenario(name: &str) -> String {
    std::fs::read_to_string(scenarios_dir().join(format!("{name}.jsonl"))).unwrap()
}

pub fn config(seed: u64) -> RunConfig {
    RunConfig::new(seed)
}

/// A registered engine with the fixture population, clock at scenario start.
pub fn engine() -> (PolicyEngine, Arc<AnchorRegistry>) {
    let registry = AnchorRegistry::new();
    let mut engine = PolicyEngine::new(registry.clone());
    engine.set_time(SCENARIO_START as u64);
    fixtures().register(&mut engine).unwrap();
    (engine, registry)
}

pub fn record(r: &str) -> String {
    format!("{PATIENT}/{r}")
}

pub fn count_access_steps(script: &str) -> usize {
    script.lines().filter(|l| l.contains("\"cmd\":\"access\"")).count()
}

pub fn draft(icc: serde_json::Value) -> consentledger_core::consent::PpaDraft {
    serde_json::from_value(serde_json::json!({
        "patient_id": PATIENT,
        "pc": [{"kind": "PERSONAL", "value": "Jordan"}, {"kind": "EMERGENCY_CONTACT", "value": "EC1001"}],
        "prc": [{"kind": "TREATMENT_TEAM", "value": "PTT-PT1001-1"}],
        "roc": ["HIPAA privacy rule"],
        "icc": icc,
        "valid_from": "2024-01-01",
        "valid_until": "2025-12-31",
    }))
    .unwrap()
}

/// Engine with a PT1001 team and one consent per (role, operation) row of
/// the table. Returns the subject playing each matrix role.
pub fn matrix_engine(seed: u64) -> (PolicyEngine, Arc<AnchorRegistry>, std::collections::BTreeMap<Role, String>) {
    let (mut engine, registry) = engine();
    let team = engine.create_team(PATIENT, seed).unwrap();
    let mut who: std::collections::BTreeMap<Role, String> = team.members.clone();
    who.insert(Role::Patient, PATIENT.to_string());
    let oracle = matrix_oracle();
    let mut icc = Vec::new();
    for role in MATRIX_ROLES.iter().filter(|r| **r != Role::Patient) {
        for op in OperationKind::ALL {
            let objects: Vec<String> =
                oracle.iter().filter(|(r, _, o)| r == role && *o == op).map(|(_, rec, _)| record(rec)).collect();
            if !objects.is_empty() {
                icc.push(serde_json::json!({
                    "consent_id": format!("IC-{PATIENT}-{role}-{op}"),
                    "grantee_subject_ids": [who[role]],
                    "object_ids": objects,
                    "operations": [op],
                }));
            }
        }
    }
    let ppa = engine.create_ppa(draft(serde_json::Value::Array(icc))).unwrap();
    for r in engine.deploy_consents(&ppa.ppa_id).unwrap() {
        r.unwrap();
    }
    (engine, registry, who)
}
