//! Scenario scripts: one JSON command per line, tagged by `cmd`.
//!
//! String values starting with `@` are placeholders resolved when the step
//! runs: `@team:<patient>:<ROLE>` names the member holding that role in the
//! patient's treatment team, `@ec:<patient>` the patient's emergency contact.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ScenarioError;
use crate::consent::PpaDraft;
use crate::model::{ObligationKind, OperationKind, Verdict};

fn default_location() -> String {
    "WARD-A".into()
}

fn default_ip() -> String {
    "10.0.0.1".into()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expect {
    #[serde(default)]
    pub verdict: Option<Verdict>,
    /// Exact set of obligation kinds on the decision.
    #[serde(default)]
    pub obligations: Option<BTreeSet<ObligationKind>>,
    #[serde(default)]
    pub reason_contains: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    CreateTeam {
        patient: String,
        #[serde(default)]
        seed: Option<u64>,
    },
    CreatePpa {
        draft: PpaDraft,
    },
    DeployConsents {
        ppa_id: String,
    },
    Access {
        subject: String,
        op: OperationKind,
        object: String,
        #[serde(default)]
        emergency: bool,
        #[serde(default = "default_location")]
        location: String,
        #[serde(default = "default_ip")]
        ip: String,
        /// Sign with a key that does not belong to the subject.
        #[serde(default)]
        forge: bool,
        /// Presented attributes; defaults to the subject's registered role.
        #[serde(default)]
        attributes: Option<BTreeMap<String, String>>,
        #[serde(default)]
        expect: Option<Expect>,
    },
    AdvanceClock {
        #[serde(default)]
        seconds: Option<u64>,
        #[serde(default)]
        to: Option<DateTime<Utc>>,
    },
    /// Merges `set` into the subject's current profile and re-registers it.
    UpdateSubject {
        subject: String,
        set: serde_json::Map<String, Value>,
    },
    Tamper {
        height: u64,
        byte: usize,
        bit: u8,
    },
    Revoke {
        patient: String,
        consent_id: String,
    },
    Verify {
        subject: String,
        #[serde(default)]
        expect_modified: Option<Vec<u64>>,
    },
}

/// A parsed but unresolved script line.
#[derive(Debug, Clone)]
pub struct Step {
    pub index: usize,
    pub raw: Value,
}

pub fn parse_script(text: &str) -> Result<Vec<Step>, ScenarioError> {
    let mut steps = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let raw: Value =
            serde_json::from_str(trimmed).map_err(|e| ScenarioError::Script { step: i + 1, message: e.to_string() })?;
        // Shape check up front so a bad script fails before it runs.
        let probe = strip_placeholders(raw.clone());
        serde_json::from_value::<Command>(probe)
            .map_err(|e| ScenarioError::Script { step: i + 1, message: e.to_string() })?;
        steps.push(Step { index: i + 1, raw });
    }
    Ok(steps)
}

fn strip_placeholders(v: Value) -> Value {
    map_strings(v, &mut |s| Ok::<_, ()>(if s.starts_with('@') { "PLACEHOLDER".into() } else { s.to_string() }))
        .expect("infallible")
}

/// Applies `f` to every string in `v`, object keys excluded.
pub fn map_strings<E>(v: Value, f: &mut impl FnMut(&str) -> Result<String, E>) -> Result<Value, E> {
    Ok(match v {
        Value::String(s) => Value::String(f(&s)?),
        Value::Array(a) => Value::Array(a.into_iter().map(|x| map_strings(x, f)).collect::<Result<_, _>>()?),
        Value::Object(o) => {
            Value::Object(o.into_iter().map(|(k, x)| Ok((k, map_strings(x, f)?))).collect::<Result<_, E>>()?)
        }
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_access_with_defaults() {
        let steps =
            parse_script(r#"{"cmd":"access","subject":"@team:PT1001:DOC","op":"READ","object":"PT1001/HR1001"}"#)
                .unwrap();
        let cmd: Command = serde_json::from_value(strip_placeholders(steps[0].raw.clone())).unwrap();
        match cmd {
            Command::Access { location, ip, emergency, forge, .. } => {
                assert_eq!((location.as_str(), ip.as_str(), emergency, forge), ("WARD-A", "10.0.0.1", false, false));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_command_reports_line() {
        let err = parse_script("\n{\"cmd\":\"explode\"}").unwrap_err();
        assert!(matches!(err, ScenarioError::Script { step: 2, .. }));
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let steps = parse_script("# setup\n\n{\"cmd\":\"tamper\",\"height\":0,\"byte\":1,\"bit\":0}").unwrap();
        assert_eq!(steps.len(), 1);
        assert_eq!(steps[0].index, 3);
    }
}
