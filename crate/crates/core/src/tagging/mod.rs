//! Dual independent review with tie-breaking.
//!
//! Every tagged narrative gets one reviewer from each of two groups. Pairs
//! that disagree go to a separate tie-breaker whose verdict becomes final.
//! Reviewers are exposed only through anonymous aliases.

mod api;
mod service;
mod simulate;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::{DateTime, Utc};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusSplit, FinalLabel};
use crate::{Error, Label, Result};

pub use api::{router, spawn_server, ServerHandle};
pub use service::{
    DecisionAck, DecisionSubmission, FinalizeReport, Progress, ReviewTask, TaggingService,
    TaskRole, REVIEWER_INSTRUCTION,
};
pub use simulate::{simulate_review, ReviewSimulation, SimulationOutcome};

/// The six exclusionary criteria a No verdict must cite.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionCode {
    WrongEvent,
    WrongSubject,
    WrongRelationship,
    WrongCharacteristics,
    TemporalError,
    NotAgeAppropriate,
}

impl ExclusionCode {
    pub const ALL: [ExclusionCode; 6] = [
        ExclusionCode::WrongEvent,
        ExclusionCode::WrongSubject,
        ExclusionCode::WrongRelationship,
        ExclusionCode::WrongCharacteristics,
        ExclusionCode::TemporalError,
        ExclusionCode::NotAgeAppropriate,
    ];

    pub fn description(self) -> &'static str {
        match self {
            ExclusionCode::WrongEvent => "wrong event",
            ExclusionCode::WrongSubject => "subject (target person) of narrative is wrong",
            ExclusionCode::WrongRelationship => "wrong subject-narrator relationship",
            ExclusionCode::WrongCharacteristics => "incorrect narrator or subject characteristics",
            ExclusionCode::TemporalError => "temporal error",
            ExclusionCode::NotAgeAppropriate => "narrative is not age-appropriate given age of narrator",
        }
    }
}

impl fmt::Display for ExclusionCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = serde_json::to_value(self).expect("unit variant");
        f.write_str(v.as_str().expect("string tag"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewerRoster {
    pub group_a: Vec<String>,
    pub group_b: Vec<String>,
    pub tie_breaker: String,
    /// Raw reviewer id to anonymous alias.
    pub display_alias: BTreeMap<String, String>,
}

impl Default for ReviewerRoster {
    /// Two groups of four plus a tie-breaker, aliased A1..A4, B1..B4, T1.
    fn default() -> Self {
        let group_a: Vec<String> = (1..=4).map(|i| format!("reviewer-{i}")).collect();
        let group_b: Vec<String> = (5..=8).map(|i| format!("reviewer-{i}")).collect();
        let tie_breaker = "reviewer-9".to_string();
        let mut display_alias = BTreeMap::new();
        for (i, id) in group_a.iter().enumerate() {
            display_alias.insert(id.clone(), format!("A{}", i + 1));
        }
        for (i, id) in group_b.iter().enumerate() {
            display_alias.insert(id.clone(), format!("B{}", i + 1));
        }
        display_alias.insert(tie_breaker.clone(), "T1".into());
        ReviewerRoster {
            group_a,
            group_b,
            tie_breaker,
            display_alias,
        }
    }
}

impl ReviewerRoster {
    pub fn validate(&self) -> Result<()> {
        if self.group_a.is_empty() || self.group_b.is_empty() {
            return Err(Error::Validation("both reviewer groups need members".into()));
        }
        let all: Vec<&String> = self.all_ids().collect();
        let distinct: BTreeSet<&String> = all.iter().copied().collect();
        if distinct.len() != all.len() {
            return Err(Error::Validation("reviewer ids must be distinct".into()));
        }
        let mut aliases = BTreeSet::new();
        for id in &all {
            let alias = self
                .display_alias
                .get(*id)
                .ok_or_else(|| Error::Validation(format!("reviewer {id} has no alias")))?;
            if !aliases.insert(alias) {
                return Err(Error::Validation(format!("alias {alias} is used twice")));
            }
            if distinct.contains(alias) {
                return Err(Error::Validation(format!("alias {alias} equals a reviewer id")));
            }
        }
        Ok(())
    }

    pub fn all_ids(&self) -> impl Iterator<Item = &String> {
        self.group_a
            .iter()
            .chain(&self.group_b)
            .chain(std::iter::once(&self.tie_breaker))
    }

    pub fn alias(&self, id: &str) -> Option<&str> {
        self.display_alias.get(id).map(String::as_str)
    }

    pub fn id_for_alias(&self, alias: &str) -> Option<&str> {
        self.display_alias
            .iter()
            .find(|(_, a)| a.as_str() == alias)
            .map(|(id, _)| id.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewAssignment {
    pub narrative_id: String,
    pub reviewer_a: String,
    pub reviewer_b: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagDecision {
    pub narrative_id: String,
    pub reviewer: String,
    pub verdict: Label,
    #[serde(default)]
    pub exclusion_codes: BTreeSet<ExclusionCode>,
    pub submitted_at: DateTime<Utc>,
}

impl TagDecision {
    /// No requires at least one exclusion code; Yes requires none.
    pub fn validate(&self) -> Result<()> {
        match (self.verdict, self.exclusion_codes.is_empty()) {
            (Label::No, true) => Err(Error::Validation(format!(
                "a No verdict on {} must cite at least one exclusion code",
                self.narrative_id
            ))),
            (Label::Yes, false) => Err(Error::Validation(format!(
                "a Yes verdict on {} cannot carry exclusion codes",
                self.narrative_id
            ))),
            _ => Ok(()),
        }
    }
}

/// Assigns each tagged narrative one reviewer per group.
///
/// Each group deals its reviewers round-robin over an independently seeded
/// shuffle of the tagged ids, so per-reviewer loads differ by at most one.
pub fn assign(
    split: &CorpusSplit,
    roster: &ReviewerRoster,
    seed: u64,
) -> Result<Vec<ReviewAssignment>> {
    roster.validate()?;
    if split.tagged_ids.is_empty() {
        return Err(Error::InvalidArgument("no tagged narratives to assign".into()));
    }
    let ids: Vec<&String> = split.tagged_ids.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let deal = |rng: &mut ChaCha8Rng, group: &[String]| -> BTreeMap<&String, String> {
        let mut order = ids.clone();
        order.shuffle(rng);
        order
            .into_iter()
            .enumerate()
            .map(|(i, id)| (id, group[i % group.len()].clone()))
            .collect()
    };
    let a = deal(&mut rng, &roster.group_a);
    let b = deal(&mut rng, &roster.group_b);
    Ok(ids
        .into_iter()
        .map(|id| ReviewAssignment {
            narrative_id: id.clone(),
            reviewer_a: a[id].clone(),
            reviewer_b: b[id].clone(),
        })
        .collect())
}

/// Latest decision per (narrative, reviewer).
pub type DecisionIndex<'a> = BTreeMap<(&'a str, &'a str), &'a TagDecision>;

pub fn index_decisions(decisions: &[TagDecision]) -> DecisionIndex<'_> {
    decisions
        .iter()
        .map(|d| ((d.narrative_id.as_str(), d.reviewer.as_str()), d))
        .collect()
}

/// Narratives whose two assigned reviewers disagree. Narratives missing
/// either decision are not reported.
pub fn find_ties(assignments: &[ReviewAssignment], decisions: &[TagDecision]) -> BTreeSet<String> {
    let index = index_decisions(decisions);
    assignments
        .iter()
        .filter(|a| {
            let va = index.get(&(a.narrative_id.as_str(), a.reviewer_a.as_str()));
            let vb = index.get(&(a.narrative_id.as_str(), a.reviewer_b.as_str()));
            matches!((va, vb), (Some(x), Some(y)) if x.verdict != y.verdict)
        })
        .map(|a| a.narrative_id.clone())
        .collect()
}

/// Final labels for every assigned narrative, in assignment order.
///
/// Agreeing pairs keep their verdict; disagreeing pairs take the verdict in
/// `tie_breaks` for that narrative.
pub fn aggregate(
    assignments: &[ReviewAssignment],
    decisions: &[TagDecision],
    tie_breaks: &[TagDecision],
) -> Result<Vec<FinalLabel>> {
    let index = index_decisions(decisions);
    let breaks: BTreeMap<&str, &TagDecision> = tie_breaks
        .iter()
        .map(|d| (d.narrative_id.as_str(), d))
        .collect();
    let verdict = |id: &str, reviewer: &str| -> Result<Label> {
        index
            .get(&(id, reviewer))
            .map(|d| d.verdict)
            .ok_or_else(|| Error::MissingDecision {
                narrative_id: id.to_string(),
                reviewer: reviewer.to_string(),
            })
    };
    assignments
        .iter()
        .map(|a| {
            let id = a.narrative_id.as_str();
            let va = verdict(id, &a.reviewer_a)?;
            let vb = verdict(id, &a.reviewer_b)?;
            if va == vb {
                Ok(FinalLabel {
                    narrative_id: id.to_string(),
                    label: va,
                    tie_broken: false,
                })
            } else {
                let tb = breaks
                    .get(id)
                    .ok_or_else(|| Error::MissingTieBreak(id.to_string()))?;
                Ok(FinalLabel {
                    narrative_id: id.to_string(),
                    label: tb.verdict,
                    tie_broken: true,
                })
            }
        })
        .collect()
}

/// Splits a decision log into primary-review decisions and tie-breaks.
pub fn partition_decisions(
    decisions: &[TagDecision],
    roster: &ReviewerRoster,
) -> (Vec<TagDecision>, Vec<TagDecision>) {
    decisions
        .iter()
        .cloned()
        .partition(|d| d.reviewer != roster.tie_breaker)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn decision(id: &str, reviewer: &str, verdict: Label) -> TagDecision {
        let exclusion_codes = if verdict == Label::No {
            [ExclusionCode::WrongEvent].into()
        } else {
            BTreeSet::new()
        };
        TagDecision {
            narrative_id: id.into(),
            reviewer: reviewer.into(),
            verdict,
            exclusion_codes,
            submitted_at: Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap(),
        }
    }

    fn split(n: usize) -> CorpusSplit {
        CorpusSplit {
            tagged_ids: (0..n).map(|i| format!("n{i:05}")).collect(),
            untagged_ids: BTreeSet::new(),
        }
    }

    #[test]
    fn default_roster_is_valid() {
        let r = ReviewerRoster::default();
        r.validate().unwrap();
        assert_eq!(r.all_ids().count(), 9);
        assert_eq!(r.id_for_alias("T1"), Some("reviewer-9"));
    }

    #[test]
    fn roster_rejects_shared_ids() {
        let mut r = ReviewerRoster::default();
        r.tie_breaker = r.group_a[0].clone();
        assert!(r.validate().is_err());
    }

    #[test]
    fn full_scale_assignment_is_balanced() {
        let roster = ReviewerRoster::default();
        let assignments = assign(&split(2880), &roster, 17).unwrap();
        assert_eq!(assignments.len(), 2880);
        let mut load: BTreeMap<&str, usize> = BTreeMap::new();
        for a in &assignments {
            assert!(roster.group_a.contains(&a.reviewer_a));
            assert!(roster.group_b.contains(&a.reviewer_b));
            *load.entry(&a.reviewer_a).or_default() += 1;
            *load.entry(&a.reviewer_b).or_default() += 1;
        }
        assert_eq!(load.len(), 8);
        assert!(load.values().all(|&n| n == 720), "{load:?}");
    }

    #[test]
    fn uneven_loads_differ_by_at_most_one() {
        let roster = ReviewerRoster::default();
        let assignments = assign(&split(103), &roster, 2).unwrap();
        for group in [&roster.group_a, &roster.group_b] {
            let loads: Vec<usize> = group
                .iter()
                .map(|r| {
                    assignments
                        .iter()
                        .filter(|a| &a.reviewer_a == r || &a.reviewer_b == r)
                        .count()
                })
                .collect();
            let (lo, hi) = (loads.iter().min().unwrap(), loads.iter().max().unwrap());
            assert!(hi - lo <= 1, "{loads:?}");
        }
    }

    #[test]
    fn single_narrative_gets_two_reviewers() {
        let assignments = assign(&split(1), &ReviewerRoster::default(), 0).unwrap();
        assert_eq!(assignments.len(), 1);
        assert_ne!(assignments[0].reviewer_a, assignments[0].reviewer_b);
    }

    #[test]
    fn assignment_is_seeded() {
        let roster = ReviewerRoster::default();
        let s = split(200);
        assert_eq!(assign(&s, &roster, 5).unwrap(), assign(&s, &roster, 5).unwrap());
        assert_ne!(assign(&s, &roster, 5).unwrap(), assign(&s, &roster, 6).unwrap());
        assert!(assign(&split(0), &roster, 5).is_err());
    }

    #[test]
    fn decision_code_invariant() {
        assert!(decision("x", "r", Label::Yes).validate().is_ok());
        assert!(decision("x", "r", Label::No).validate().is_ok());
        let mut d = decision("x", "r", Label::No);
        d.exclusion_codes.clear();
        assert!(matches!(d.validate(), Err(Error::Validation(_))));
        let mut d = decision("x", "r", Label::Yes);
        d.exclusion_codes.insert(ExclusionCode::TemporalError);
        assert!(d.validate().is_err());
    }

    fn pair(id: &str) -> ReviewAssignment {
        ReviewAssignment {
            narrative_id: id.into(),
            reviewer_a: "a".into(),
            reviewer_b: "b".into(),
        }
    }

    #[test]
    fn ties_are_disagreeing_pairs() {
        let assignments = vec![pair("1"), pair("2"), pair("3")];
        let decisions = vec![
            decision("1", "a", Label::Yes),
            decision("1", "b", Label::No),
            decision("2", "a", Label::Yes),
            decision("2", "b", Label::Yes),
            decision("3", "a", Label::No),
        ];
        assert_eq!(find_ties(&assignments, &decisions), ["1".to_string()].into());
    }

    #[test]
    fn aggregation_rules() {
        let assignments = vec![pair("1"), pair("2"), pair("3")];
        let decisions = vec![
            decision("1", "a", Label::Yes),
            decision("1", "b", Label::No),
            decision("2", "a", Label::No),
            decision("2", "b", Label::No),
            decision("3", "a", Label::Yes),
            decision("3", "b", Label::Yes),
        ];
        let tb = vec![decision("1", "t", Label::Yes)];
        let labels = aggregate(&assignments, &decisions, &tb).unwrap();
        assert_eq!(
            labels,
            vec![
                FinalLabel { narrative_id: "1".into(), label: Label::Yes, tie_broken: true },
                FinalLabel { narrative_id: "2".into(), label: Label::No, tie_broken: false },
                FinalLabel { narrative_id: "3".into(), label: Label::Yes, tie_broken: false },
            ]
        );
        assert!(matches!(
            aggregate(&assignments, &decisions, &[]),
            Err(Error::MissingTieBreak(id)) if id == "1"
        ));
        assert!(matches!(
            aggregate(&assignments, &decisions[1..], &tb),
            Err(Error::MissingDecision { .. })
        ));
    }

    #[test]
    fn exclusion_codes_serialize_snake_case() {
        assert_eq!(ExclusionCode::NotAgeAppropriate.to_string(), "not_age_appropriate");
        let parsed: ExclusionCode = serde_json::from_str("\"wrong_event\"").unwrap();
        assert_eq!(parsed, ExclusionCode::WrongEvent);
    }
}
