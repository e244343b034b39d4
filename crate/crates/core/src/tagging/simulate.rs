//! Scripted reviewers for offline runs against planted ground truth.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::service::{DecisionSubmission, TaggingService};
use super::ExclusionCode;
use crate::corpus::{sample_size, FinalLabel};
use crate::{Label, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReviewSimulation {
    /// Fraction of narratives on which exactly one primary reviewer votes
    /// against the truth. The count is `round(rate * n)`, not a random draw.
    pub disagreement_rate: f64,
    pub seed: u64,
}

impl Default for ReviewSimulation {
    fn default() -> Self {
        ReviewSimulation {
            disagreement_rate: 0.10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationOutcome {
    pub reviewed: usize,
    pub planted_disagreements: usize,
    pub ties: usize,
    pub tie_rate: f64,
    pub labels: Vec<FinalLabel>,
}

fn submission(
    id: &str,
    alias: &str,
    verdict: Label,
    defect: Option<ExclusionCode>,
    rng: &mut ChaCha8Rng,
) -> DecisionSubmission {
    let exclusion_codes: BTreeSet<ExclusionCode> = match verdict {
        Label::Yes => BTreeSet::new(),
        Label::No => [defect.unwrap_or_else(|| *ExclusionCode::ALL.choose(rng).unwrap())].into(),
    };
    DecisionSubmission {
        narrative_id: id.to_string(),
        reviewer: alias.to_string(),
        verdict,
        exclusion_codes,
    }
}

/// Runs both review rounds through `service` and finalizes.
///
/// `truth` maps each assigned narrative to its planted defect (`None` for
/// valid narratives). Primary reviewers vote the truth except on the chosen
/// disagreement set; the tie-breaker always votes the truth.
pub fn simulate_review(
    service: &TaggingService,
    truth: &BTreeMap<String, Option<ExclusionCode>>,
    sim: &ReviewSimulation,
) -> Result<SimulationOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(sim.seed);
    let roster = service.roster().clone();
    let assignments: Vec<_> = service.assignments().cloned().collect();
    let n = assignments.len();
    let k = sample_size(n, sim.disagreement_rate.clamp(0.0, 1.0)).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let disagree: BTreeSet<usize> = order.into_iter().take(k).collect();

    for (i, a) in assignments.iter().enumerate() {
        let defect = truth.get(&a.narrative_id).copied().flatten();
        let verdict = Label::from_bool(defect.is_none());
        let flip_a = disagree.contains(&i) && rng.gen_bool(0.5);
        let flip_b = disagree.contains(&i) && !flip_a;
        for (reviewer, flip) in [(&a.reviewer_a, flip_a), (&a.reviewer_b, flip_b)] {
            let alias = roster.alias(reviewer).expect("validated roster");
            let v = if flip { verdict.flip() } else { verdict };
            service.record_decision(submission(&a.narrative_id, alias, v, defect, &mut rng))?;
        }
    }

    let tb_alias = roster.alias(&roster.tie_breaker).expect("validated roster").to_string();
    let ties = service.ties(&tb_alias)?;
    for task in &ties {
        let defect = truth.get(&task.narrative_id).copied().flatten();
        let verdict = Label::from_bool(defect.is_none());
        service.record_decision(submission(&task.narrative_id, &tb_alias, verdict, defect, &mut rng))?;
    }
    service.finalize(None)?;

    Ok(SimulationOutcome {
        reviewed: n,
        planted_disagreements: k,
        ties: ties.len(),
        tie_rate: if n == 0 { 0.0 } else { ties.len() as f64 / n as f64 },
        labels: service.labels(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CorpusSplit, EventType};
    use crate::fixtures::synthetic_corpus;
    use crate::tagging::{assign, ReviewerRoster};
    use crate::Clock;

    #[test]
    fn truthful_reviewers_recover_truth_and_tie_rate_is_exact() {
        let corpus = synthetic_corpus(&[(EventType::Death, 300)]);
        let split = CorpusSplit {
            tagged_ids: corpus.iter().map(|r| r.id.clone()).collect(),
            untagged_ids: BTreeSet::new(),
        };
        let roster = ReviewerRoster::default();
        let assignments = assign(&split, &roster, 3).unwrap();
        let svc = TaggingService::new(&corpus, roster, assignments, Clock::frozen()).unwrap();
        let truth: BTreeMap<String, Option<ExclusionCode>> = corpus
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.clone(), (i % 8 == 0).then_some(ExclusionCode::TemporalError)))
            .collect();
        let out = simulate_review(
            &svc,
            &truth,
            &ReviewSimulation { disagreement_rate: 0.1, seed: 9 },
        )
        .unwrap();
        assert_eq!(out.ties, 30);
        assert_eq!(out.labels.len(), 300);
        assert_eq!(out.labels.iter().filter(|l| l.tie_broken).count(), 30);
        for l in &out.labels {
            assert_eq!(l.label, Label::from_bool(truth[&l.narrative_id].is_none()));
        }
    }
}
