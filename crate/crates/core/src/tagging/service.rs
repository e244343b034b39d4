use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{aggregate, ExclusionCode, ReviewAssignment, ReviewerRoster, TagDecision};
use crate::corpus::{AgentProfile, EventType, FinalLabel, NarrativeRecord};
use crate::io::write_jsonl;
use crate::{Clock, Error, Label, Result};

/// Shown with every task; identical for all narratives.
pub const REVIEWER_INSTRUCTION: &str = "Read the prompt information and the narrative. Tag Yes if \
the narrative meets the intention of the prompt. Otherwise tag No and select one or more \
exclusionary criteria.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskRole {
    Review,
    TieBreak,
}

/// What a reviewer sees for one narrative. Never carries other verdicts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewTask {
    pub narrative_id: String,
    pub role: TaskRole,
    pub event_type: EventType,
    pub instruction: String,
    pub prompt_text: String,
    pub profile: AgentProfile,
    pub narrative_text: String,
}

/// Body of `POST /api/decisions`; `reviewer` is the display alias.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionSubmission {
    pub narrative_id: String,
    pub reviewer: String,
    pub verdict: Label,
    #[serde(default)]
    pub exclusion_codes: BTreeSet<ExclusionCode>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionAck {
    pub narrative_id: String,
    pub reviewer: String,
    pub verdict: Label,
    pub replaced: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub assigned: usize,
    pub completed: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalizeReport {
    pub finalized: Vec<FinalLabel>,
    /// Narratives still missing a review or a tie-break.
    pub pending: Vec<String>,
}

#[derive(Default)]
struct State {
    decisions: BTreeMap<(String, String), TagDecision>,
    finalized: BTreeMap<String, FinalLabel>,
}

impl State {
    fn verdict(&self, id: &str, reviewer: &str) -> Option<Label> {
        self.decisions
            .get(&(id.to_string(), reviewer.to_string()))
            .map(|d| d.verdict)
    }

    fn is_tied(&self, a: &ReviewAssignment) -> bool {
        matches!(
            (self.verdict(&a.narrative_id, &a.reviewer_a), self.verdict(&a.narrative_id, &a.reviewer_b)),
            (Some(x), Some(y)) if x != y
        )
    }
}

/// Shared review state behind the HTTP API and the simulated reviewers.
///
/// Decisions are upserted per (narrative, reviewer) until the narrative is
/// finalized; after that they are frozen.
pub struct TaggingService {
    records: BTreeMap<String, NarrativeRecord>,
    assignments: BTreeMap<String, ReviewAssignment>,
    roster: ReviewerRoster,
    clock: Clock,
    decisions_path: Option<PathBuf>,
    labels_path: Option<PathBuf>,
    state: Mutex<State>,
}

impl TaggingService {
    pub fn new(
        corpus: &[NarrativeRecord],
        roster: ReviewerRoster,
        assignments: Vec<ReviewAssignment>,
        clock: Clock,
    ) -> Result<Self> {
        roster.validate()?;
        let records: BTreeMap<String, NarrativeRecord> =
            corpus.iter().map(|r| (r.id.clone(), r.clone())).collect();
        let mut by_id = BTreeMap::new();
        for a in assignments {
            if !records.contains_key(&a.narrative_id) {
                return Err(Error::UnknownNarrative(a.narrative_id));
            }
            if !roster.group_a.contains(&a.reviewer_a) || !roster.group_b.contains(&a.reviewer_b) {
                return Err(Error::Validation(format!(
                    "assignment for {} uses reviewers outside their groups",
                    a.narrative_id
                )));
            }
            if by_id.insert(a.narrative_id.clone(), a).is_some() {
                return Err(Error::Validation("narrative assigned twice".into()));
            }
        }
        Ok(TaggingService {
            records,
            assignments: by_id,
            roster,
            clock,
            decisions_path: None,
            labels_path: None,
            state: Mutex::new(State::default()),
        })
    }

    /// Writes the decision log after every change and the labels after
    /// every finalize.
    pub fn persist_to(mut self, decisions: PathBuf, labels: PathBuf) -> Self {
        self.decisions_path = Some(decisions);
        self.labels_path = Some(labels);
        self
    }

    /// Reloads previously recorded decisions.
    pub fn restore(&self, decisions: Vec<TagDecision>) -> Result<()> {
        let mut state = self.state.lock().unwrap();
        for d in decisions {
            d.validate()?;
            state
                .decisions
                .insert((d.narrative_id.clone(), d.reviewer.clone()), d);
        }
        Ok(())
    }

    pub fn roster(&self) -> &ReviewerRoster {
        &self.roster
    }

    pub fn assignments(&self) -> impl Iterator<Item = &ReviewAssignment> {
        self.assignments.values()
    }

    fn reviewer_for_alias(&self, alias: &str) -> Result<&str> {
        self.roster
            .id_for_alias(alias)
            .ok_or_else(|| Error::Forbidden(format!("unknown reviewer alias `{alias}`")))
    }

    fn task(&self, id: &str, role: TaskRole) -> ReviewTask {
        let r = &self.records[id];
        ReviewTask {
            narrative_id: r.id.clone(),
            role,
            event_type: r.event_type,
            instruction: REVIEWER_INSTRUCTION.to_string(),
            prompt_text: r.prompt_text.clone(),
            profile: r.profile.clone(),
            narrative_text: r.narrative_text.clone(),
        }
    }

    /// Next narrative the reviewer has not yet tagged. For the tie-breaker,
    /// the next unresolved tie.
    pub fn queue_next(&self, alias: &str) -> Result<Option<ReviewTask>> {
        let reviewer = self.reviewer_for_alias(alias)?;
        let state = self.state.lock().unwrap();
        if reviewer == self.roster.tie_breaker {
            return Ok(self
                .open_ties(&state)
                .into_iter()
                .find(|id| state.verdict(id, reviewer).is_none())
                .map(|id| self.task(&id, TaskRole::TieBreak)));
        }
        Ok(self
            .assignments
            .values()
            .filter(|a| a.reviewer_a == reviewer || a.reviewer_b == reviewer)
            .find(|a| {
                !state.finalized.contains_key(&a.narrative_id)
                    && state.verdict(&a.narrative_id, reviewer).is_none()
            })
            .map(|a| self.task(&a.narrative_id, TaskRole::Review)))
    }

    /// All unresolved tie-break tasks. Tie-breaker only.
    pub fn ties(&self, alias: &str) -> Result<Vec<ReviewTask>> {
        let reviewer = self.reviewer_for_alias(alias)?;
        if reviewer != self.roster.tie_breaker {
            return Err(Error::Forbidden("ties are served to the tie-breaker only".into()));
        }
        let state = self.state.lock().unwrap();
        Ok(self
            .open_ties(&state)
            .into_iter()
            .map(|id| self.task(&id, TaskRole::TieBreak))
            .collect())
    }

    fn open_ties(&self, state: &State) -> Vec<String> {
        self.assignments
            .values()
            .filter(|a| !state.finalized.contains_key(&a.narrative_id) && state.is_tied(a))
            .map(|a| a.narrative_id.clone())
            .collect()
    }

    /// Ids currently tied, finalized or not.
    pub fn tied_ids(&self) -> BTreeSet<String> {
        let state = self.state.lock().unwrap();
        self.assignments
            .values()
            .filter(|a| state.is_tied(a))
            .map(|a| a.narrative_id.clone())
            .collect()
    }

    pub fn record_decision(&self, submission: DecisionSubmission) -> Result<DecisionAck> {
        let reviewer = self.reviewer_for_alias(&submission.reviewer)?.to_string();
        let assignment = self
            .assignments
            .get(&submission.narrative_id)
            .ok_or_else(|| Error::UnknownNarrative(submission.narrative_id.clone()))?;
        let decision = TagDecision {
            narrative_id: submission.narrative_id.clone(),
            reviewer: reviewer.clone(),
            verdict: submission.verdict,
            exclusion_codes: submission.exclusion_codes,
            submitted_at: self.clock.now(),
        };
        decision.validate()?;

        let mut state = self.state.lock().unwrap();
        if state.finalized.contains_key(&decision.narrative_id) {
            return Err(Error::Finalized(decision.narrative_id));
        }
        let allowed = if reviewer == self.roster.tie_breaker {
            state.is_tied(assignment)
        } else {
            assignment.reviewer_a == reviewer || assignment.reviewer_b == reviewer
        };
        if !allowed {
            return Err(Error::UnassignedReviewer {
                reviewer: submission.reviewer,
                narrative_id: decision.narrative_id,
            });
        }
        let verdict = decision.verdict;
        let replaced = state
            .decisions
            .insert((decision.narrative_id.clone(), reviewer), decision)
            .is_some();
        self.persist_decisions(&state)?;
        Ok(DecisionAck {
            narrative_id: submission.narrative_id,
            reviewer: submission.reviewer,
            verdict,
            replaced,
        })
    }

    pub fn progress(&self) -> BTreeMap<String, Progress> {
        let state = self.state.lock().unwrap();
        let mut out: BTreeMap<String, Progress> = BTreeMap::new();
        for (id, alias) in &self.roster.display_alias {
            let p = out.entry(alias.clone()).or_default();
            if *id == self.roster.tie_breaker {
                for a in self.assignments.values().filter(|a| state.is_tied(a)) {
                    p.assigned += 1;
                    if state.verdict(&a.narrative_id, id).is_some() {
                        p.completed += 1;
                    }
                }
            } else {
                for a in self
                    .assignments
                    .values()
                    .filter(|a| a.reviewer_a == *id || a.reviewer_b == *id)
                {
                    p.assigned += 1;
                    if state.verdict(&a.narrative_id, id).is_some() {
                        p.completed += 1;
                    }
                }
            }
        }
        out
    }

    /// Freezes every narrative (or just `ids`) whose label is decidable.
    ///
    /// With explicit ids, an undecidable narrative is an error and nothing
    /// is frozen.
    pub fn finalize(&self, ids: Option<&[String]>) -> Result<FinalizeReport> {
        let mut state = self.state.lock().unwrap();
        let targets: Vec<&ReviewAssignment> = match ids {
            Some(ids) => ids
                .iter()
                .map(|id| {
                    self.assignments
                        .get(id)
                        .ok_or_else(|| Error::UnknownNarrative(id.clone()))
                })
                .collect::<Result<_>>()?,
            None => self.assignments.values().collect(),
        };
        let decisions: Vec<TagDecision> = state.decisions.values().cloned().collect();
        let (primary, breaks): (Vec<TagDecision>, Vec<TagDecision>) = decisions
            .into_iter()
            .partition(|d| d.reviewer != self.roster.tie_breaker);

        let mut report = FinalizeReport::default();
        let mut ready = Vec::new();
        for a in targets {
            if state.finalized.contains_key(&a.narrative_id) {
                continue;
            }
            match aggregate(std::slice::from_ref(a), &primary, &breaks) {
                Ok(mut labels) => ready.push(labels.remove(0)),
                Err(e) if ids.is_some() => return Err(e),
                Err(_) => report.pending.push(a.narrative_id.clone()),
            }
        }
        for label in ready {
            state.finalized.insert(label.narrative_id.clone(), label.clone());
            report.finalized.push(label);
        }
        if let Some(path) = &self.labels_path {
            let labels: Vec<FinalLabel> = state.finalized.values().cloned().collect();
            write_jsonl(path, &labels)?;
        }
        Ok(report)
    }

    pub fn labels(&self) -> Vec<FinalLabel> {
        self.state.lock().unwrap().finalized.values().cloned().collect()
    }

    /// Full decision log, keyed by raw reviewer id. Not for API responses.
    pub fn decisions(&self) -> Vec<TagDecision> {
        self.state.lock().unwrap().decisions.values().cloned().collect()
    }

    fn persist_decisions(&self, state: &State) -> Result<()> {
        if let Some(path) = &self.decisions_path {
            let all: Vec<&TagDecision> = state.decisions.values().collect();
            write_jsonl(path, &all)?;
        }
        Ok(())
    }
}
