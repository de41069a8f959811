//! Patient treatment teams: one member per role, drawn from candidate pools
//! with a seeded generator.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::ConsentError;
use crate::model::{self, Canonical, Digest, Role};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreatmentTeam {
    pub ptt_id: String,
    pub patient_id: String,
    pub members: BTreeMap<Role, String>,
    pub ptt_digest: Digest,
}

impl TreatmentTeam {
    pub fn compute_digest(ptt_id: &str, patient_id: &str, members: &BTreeMap<Role, String>) -> Digest {
        model::digest(&(ptt_id, patient_id, members).canonical_bytes())
    }

    pub fn recompute_digest(&self) -> Digest {
        Self::compute_digest(&self.ptt_id, &self.patient_id, &self.members)
    }

    pub fn role_of(&self, subject_id: &str) -> Option<Role> {
        self.members.iter().find(|(_, s)| s.as_str() == subject_id).map(|(r, _)| *r)
    }
}

/// Draws one member per selectable role. The emergency contact slot is never
/// drawn: it is the contact the patient registered.
pub fn draw_members(
    patient_id: &str,
    pools: &BTreeMap<Role, Vec<String>>,
    emergency_contact: Option<&str>,
    seed: u64,
) -> Result<BTreeMap<Role, String>, ConsentError> {
    let mut rng = ChaCha20Rng::from_seed(model::digest_concat([&seed.to_be_bytes()[..], patient_id.as_bytes()]).0);
    let mut members = BTreeMap::new();
    for role in Role::TEAM {
        if role == Role::Emc {
            let ec = emergency_contact.ok_or_else(|| {
                ConsentError::IncompleteTeam(format!("{patient_id} has no registered emergency contact"))
            })?;
            members.insert(role, ec.to_string());
            continue;
        }
        let mut pool: Vec<&String> = pools.get(&role).map(|p| p.iter().collect()).unwrap_or_default();
        pool.sort();
        pool.dedup();
        if pool.is_empty() {
            return Err(ConsentError::IncompleteTeam(format!("no candidates for {role}")));
        }
        let pick = pool[rng.gen_range(0..pool.len())];
        members.insert(role, pick.clone());
    }
    let mut seen = std::collections::BTreeSet::new();
    for s in members.values() {
        if !seen.insert(s) {
            return Err(ConsentError::TeamConflict(format!("{s} would fill two slots")));
        }
    }
    Ok(members)
}

/// Teams keyed by patient, with the stamp at which each was formed.
#[derive(Debug, Clone, Default)]
pub struct TeamRegistry {
    teams: BTreeMap<String, (u64, TreatmentTeam)>,
}

impl TeamRegistry {
    pub fn insert(&mut self, team: TreatmentTeam, seq: u64) -> Result<(), ConsentError> {
        if self.teams.contains_key(&team.patient_id) {
            return Err(ConsentError::TeamConflict(format!("{} already has a team", team.patient_id)));
        }
        if self.teams.values().any(|(_, t)| t.ptt_id == team.ptt_id) {
            return Err(ConsentError::TeamConflict(format!("duplicate team id {}", team.ptt_id)));
        }
        self.teams.insert(team.patient_id.clone(), (seq, team));
        Ok(())
    }

    pub fn team_of(&self, patient_id: &str) -> Option<&TreatmentTeam> {
        self.teams.get(patient_id).map(|(_, t)| t)
    }

    pub fn by_id(&self, ptt_id: &str) -> Option<&TreatmentTeam> {
        self.teams.values().map(|(_, t)| t).find(|t| t.ptt_id == ptt_id)
    }

    pub fn by_id_mut(&mut self, ptt_id: &str) -> Option<&mut TreatmentTeam> {
        self.teams.values_mut().map(|(_, t)| t).find(|t| t.ptt_id == ptt_id)
    }

    /// True when `subject_id` fills `role` on the patient's team as of `as_of`.
    pub fn is_member_as_of(&self, patient_id: &str, role: Role, subject_id: &str, as_of: u64) -> bool {
        self.teams
            .get(patient_id)
            .is_some_and(|(seq, t)| *seq < as_of && t.members.get(&role).is_some_and(|m| m == subject_id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &TreatmentTeam> {
        self.teams.values().map(|(_, t)| t)
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    use super::tests_support::pools;

    #[test]
    fn full_team() {
        let m = draw_members("PT1001", &pools(), Some("EC1001"), 7).unwrap();
        assert_eq!(m.len(), 9);
        assert_eq!(m[&Role::Emc], "EC1001");
    }

    #[test]
    fn seeded_draw_is_repeatable() {
        let a = draw_members("PT1001", &pools(), Some("EC1001"), 7).unwrap();
        let b = draw_members("PT1001", &pools(), Some("EC1001"), 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_pool_or_missing_contact() {
        let mut p = pools();
        p.insert(Role::Nrs, vec![]);
        assert!(matches!(draw_members("PT1001", &p, Some("EC1001"), 1), Err(ConsentError::IncompleteTeam(_))));
        assert!(matches!(draw_members("PT1001", &pools(), None, 1), Err(ConsentError::IncompleteTeam(_))));
    }

    #[test]
    fn one_subject_in_two_slots_conflicts() {
        let mut p = pools();
        p.insert(Role::Nrs, vec!["PR1010".into()]);
        assert!(matches!(draw_members("PT1001", &p, Some("EC1001"), 1), Err(ConsentError::TeamConflict(_))));
    }

    #[test]
    fn membership_is_stamped() {
        let members = draw_members("PT1001", &pools(), Some("EC1001"), 3).unwrap();
        let doc = members[&Role::Doc].clone();
        let digest = TreatmentTeam::compute_digest("PTT-PT1001-1", "PT1001", &members);
        let team =
            TreatmentTeam { ptt_id: "PTT-PT1001-1".into(), patient_id: "PT1001".into(), members, ptt_digest: digest };
        let mut reg = TeamRegistry::default();
        reg.insert(team.clone(), 5).unwrap();
        assert!(!reg.is_member_as_of("PT1001", Role::Doc, &doc, 5));
        assert!(reg.is_member_as_of("PT1001", Role::Doc, &doc, 6));
        assert!(matches!(reg.insert(team, 9), Err(ConsentError::TeamConflict(_))));
    }
}
