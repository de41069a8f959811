//! Policy data model. Policies are stored artifacts, loaded from line-delimited
//! JSON, and evaluated by [`super::decision`].

use std::collections::BTreeSet;
use std::fmt;
use std::marker::PhantomData;

use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::model::{ObligationKind, OperationKind, Role};

/// `"*"` or an explicit list in JSON.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Selector<T: Ord> {
    #[default]
    All,
    Only(BTreeSet<T>),
}

impl<T: Ord> Selector<T> {
    pub fn matches(&self, value: &T) -> bool {
        match self {
            Selector::All => true,
            Selector::Only(set) => set.contains(value),
        }
    }
}

/// Binary form of [`Selector`] for canonical encoding.
#[derive(Serialize, Deserialize)]
enum SelectorRepr<T: Ord> {
    All,
    Only(BTreeSet<T>),
}

impl<T: Ord + Serialize> Serialize for Selector<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if serializer.is_human_readable() {
            match self {
                Selector::All => serializer.serialize_str("*"),
                Selector::Only(set) => set.serialize(serializer),
            }
        } else {
            match self {
                Selector::All => serializer.serialize_unit_variant("Selector", 0, "All"),
                Selector::Only(set) => serializer.serialize_newtype_variant("Selector", 1, "Only", set),
            }
        }
    }
}

impl<'de, T: Ord + Deserialize<'de>> Deserialize<'de> for Selector<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        if !deserializer.is_human_readable() {
            return Ok(match SelectorRepr::<T>::deserialize(deserializer)? {
                SelectorRepr::All => Selector::All,
                SelectorRepr::Only(s) => Selector::Only(s),
            });
        }

        struct V<T>(PhantomData<T>);
        impl<'de, T: Ord + Deserialize<'de>> Visitor<'de> for V<T> {
            type Value = Selector<T>;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("\"*\" or a list")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<Self::Value, E> {
                if v == "*" {
                    Ok(Selector::All)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Self::Value, A::Error> {
                let mut set = BTreeSet::new();
                while let Some(item) = seq.next_element()? {
                    set.insert(item);
                }
                Ok(Selector::Only(set))
            }
        }
        deserializer.deserialize_any(V(PhantomData))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Effect {
    Permit,
    Deny,
}

/// How the subject must relate to the record's owner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Relation {
    Owner,
    /// Holds the slot matching the subject's role on the owner's team.
    TeamMember,
    /// The owner's registered emergency contact.
    EmergencyContact,
    Any,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Target {
    pub roles: Selector<Role>,
    /// Must equal the request's emergency flag when set.
    #[serde(default)]
    pub emergency: Option<bool>,
    /// Must equal "training expiry before the request date" when set.
    #[serde(default)]
    pub training_expired: Option<bool>,
}

impl Target {
    pub fn has_environment_predicates(&self) -> bool {
        self.emergency.is_some() || self.training_expired.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub effect: Effect,
    pub roles: Selector<Role>,
    pub relation: Relation,
    pub operations: Selector<OperationKind>,
    /// Record numbers (`HR1005`) or `AUDIT-TRAIL`.
    pub records: Selector<String>,
    #[serde(default)]
    pub except: BTreeSet<String>,
}

impl Rule {
    pub fn covers_record(&self, record: &str) -> bool {
        self.records.matches(&record.to_string()) && !self.except.contains(record)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObligationTemplate {
    pub kind: ObligationKind,
    /// Records whose access triggers the obligation.
    #[serde(default)]
    pub records: Selector<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    pub policy_id: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub priority: i32,
    pub target: Target,
    pub rules: Vec<Rule>,
    #[serde(default)]
    pub obligations: Vec<ObligationTemplate>,
}

impl Policy {
    pub fn validate(&self) -> Result<(), String> {
        if self.policy_id.is_empty() {
            return Err("policy_id is empty".into());
        }
        if self.rules.is_empty() {
            return Err(format!("policy {} has no rules", self.policy_id));
        }
        for r in &self.rules {
            if matches!(&r.roles, Selector::Only(s) if s.is_empty())
                || matches!(&r.operations, Selector::Only(s) if s.is_empty())
                || matches!(&r.records, Selector::Only(s) if s.is_empty())
            {
                return Err(format!("policy {} has a rule with an empty selector", self.policy_id));
            }
        }
        Ok(())
    }

    /// Ordering used everywhere policies are listed: higher priority first,
    /// then natural id order (P2 before P10).
    pub fn sort_key(&self) -> (std::cmp::Reverse<i32>, usize, String) {
        (std::cmp::Reverse(self.priority), self.policy_id.len(), self.policy_id.clone())
    }
}
