//! Writes a run bundle to disk.

use std::fs;
use std::path::Path;

use serde::Serialize;

use super::runner::Bundle;
use super::ScenarioError;

pub const DECISIONS: &str = "decisions.jsonl";
pub const CHAIN: &str = "chain.jsonl";
pub const VERDICTS: &str = "verdicts.jsonl";
pub const DROPPED: &str = "dropped.jsonl";
pub const ANCHORS: &str = "anchors.jsonl";
pub const VERIFICATIONS: &str = "verifications.jsonl";
pub const PCAT: &str = "pcat.jsonl";
pub const REPORT: &str = "report.json";
pub const SUMMARY: &str = "summary.txt";
pub const CLAIMS_DIR: &str = "claims";

pub fn jsonl<T: Serialize>(rows: &[T]) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).expect("report rows serialize"));
        out.push('\n');
    }
    out
}

/// The JSON report. Keys come out sorted because `serde_json::Value` maps
/// are ordered.
pub fn report_json(bundle: &Bundle) -> String {
    let value = serde_json::json!({
        "summary": bundle.summary,
        "chain_check": bundle.chain_check,
        "anchor_mismatches": bundle.anchor_mismatches,
        "tampered_heights": bundle.tampered,
        "head_hash": bundle.head_hash,
        "violations": bundle.violations,
    });
    let mut s = serde_json::to_string_pretty(&value).expect("report serializes");
    s.push('\n');
    s
}

/// Every output file (relative path) with its contents, in a fixed order.
pub fn render(bundle: &Bundle) -> Vec<(String, String)> {
    let mut files: Vec<(String, String)> = [
        (DECISIONS, jsonl(&bundle.decisions)),
        (CHAIN, bundle.chain_jsonl()),
        (VERDICTS, jsonl(&bundle.verdicts)),
        (DROPPED, jsonl(&bundle.dropped)),
        (ANCHORS, bundle.anchors_jsonl.clone()),
        (VERIFICATIONS, jsonl(&bundle.verifications)),
        (PCAT, jsonl(&bundle.pcat)),
        (REPORT, report_json(bundle)),
        (SUMMARY, bundle.summary.text()),
    ]
    .into_iter()
    .map(|(n, c)| (n.to_string(), c))
    .collect();
    for (subject, claims) in &bundle.claims {
        files.push((format!("{CLAIMS_DIR}/{subject}.jsonl"), jsonl(claims)));
    }
    files
}

pub fn write_bundle(bundle: &Bundle, dir: &Path) -> Result<(), ScenarioError> {
    let io = |e: std::io::Error| ScenarioError::Io(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir.join(CLAIMS_DIR)).map_err(io)?;
    for (name, contents) in render(bundle) {
        fs::write(dir.join(name), contents).map_err(io)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::fixtures::tests_support::shipped_dir;
    use crate::scenario::{run_scenario, FixtureSet, RunConfig};

    #[test]
    fn bundle_files_are_written() {
        let set = FixtureSet::read(&shipped_dir()).unwrap();
        let script = r#"{"cmd":"access","subject":"PT1001","op":"READ","object":"PT1001/HR1001"}"#;
        let b = run_scenario(&set, script, &RunConfig::new(3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_bundle(&b, dir.path()).unwrap();
        for name in [DECISIONS, CHAIN, VERDICTS, DROPPED, ANCHORS, VERIFICATIONS, PCAT, REPORT, SUMMARY] {
            assert!(dir.path().join(name).is_file(), "{name}");
        }
        assert!(dir.path().join("claims/PT1001.jsonl").is_file());
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join(REPORT)).unwrap()).unwrap();
        assert_eq!(report["summary"]["permits"], 1);
        assert_eq!(report["chain_check"]["result"], "OK");
    }
}
