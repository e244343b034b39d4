//! Count-threshold voting over model predictions, and McNemar comparisons
//! of each member against the resulting baseline.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::models::{ModelKind, PredictionSet};
use crate::stats::{mcnemar, StatTestResult, TestConfig};
use crate::{Error, Label, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    /// Yes votes needed for a final Yes; `None` means a strict majority.
    #[serde(default)]
    pub threshold: Option<usize>,
    pub members: Vec<ModelKind>,
}

impl EnsembleConfig {
    pub fn majority(members: Vec<ModelKind>) -> Self {
        EnsembleConfig {
            threshold: None,
            members,
        }
    }

    /// `floor(m / 2) + 1` unless set explicitly.
    pub fn effective_threshold(&self) -> usize {
        self.threshold.unwrap_or(self.members.len() / 2 + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.members.len();
        if m == 0 {
            return Err(Error::InvalidArgument("ensemble has no members".into()));
        }
        let unique: BTreeSet<&ModelKind> = self.members.iter().collect();
        if unique.len() != m {
            return Err(Error::InvalidArgument("duplicate ensemble member".into()));
        }
        let t = self.effective_threshold();
        if t == 0 || t > m {
            return Err(Error::InvalidArgument(format!("threshold {t} outside 1..={m}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsemblePrediction {
    pub narrative_id: String,
    pub votes: BTreeMap<ModelKind, Label>,
    pub yes_count: usize,
    #[serde(rename = "final")]
    pub final_label: Label,
}

pub fn decide(yes_count: usize, threshold: usize) -> Label {
    Label::from_bool(yes_count >= threshold)
}

/// Votes over exactly the configured members. Missing or extra member
/// sets abort the vote rather than shrinking the majority.
pub fn vote(sets: &[PredictionSet], config: &EnsembleConfig) -> Result<Vec<EnsemblePrediction>> {
    config.validate()?;
    let configured: BTreeSet<&ModelKind> = config.members.iter().collect();
    let supplied: BTreeSet<&ModelKind> = sets.iter().map(|s| &s.model).collect();
    if supplied.len() != sets.len() {
        return Err(Error::InvalidArgument("two prediction sets for the same model".into()));
    }
    if configured != supplied {
        let missing: Vec<String> = configured.difference(&supplied).map(|m| m.to_string()).collect();
        let extra: Vec<String> = supplied.difference(&configured).map(|m| m.to_string()).collect();
        return Err(Error::CoverageMismatch(format!(
            "ensemble members missing {missing:?}, unexpected {extra:?}; reconfigure the ensemble explicitly"
        )));
    }
    let first = &sets[0];
    for s in &sets[1..] {
        if s.predictions.len() != first.predictions.len()
            || !s.predictions.keys().zip(first.predictions.keys()).all(|(a, b)| a == b)
        {
            return Err(Error::CoverageMismatch(format!(
                "{} and {} predict different ids",
                first.model, s.model
            )));
        }
    }
    let threshold = config.effective_threshold();
    Ok(first
        .predictions
        .keys()
        .map(|id| {
            let votes: BTreeMap<ModelKind, Label> =
                sets.iter().map(|s| (s.model.clone(), s.predictions[id])).collect();
            let yes_count = votes.values().filter(|l| l.is_yes()).count();
            EnsemblePrediction {
                narrative_id: id.clone(),
                votes,
                yes_count,
                final_label: decide(yes_count, threshold),
            }
        })
        .collect())
}

pub fn final_labels(ensemble: &[EnsemblePrediction]) -> BTreeMap<String, Label> {
    ensemble.iter().map(|e| (e.narrative_id.clone(), e.final_label)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub model: ModelKind,
    pub result: StatTestResult,
    pub significant: bool,
}

/// One McNemar test per prediction set against the ensemble labels.
pub fn compare_to_ensemble(
    sets: &[PredictionSet],
    ensemble: &[EnsemblePrediction],
    config: &TestConfig,
) -> Result<Vec<ModelComparison>> {
    let baseline = final_labels(ensemble);
    sets.iter()
        .map(|s| {
            let result = mcnemar(&s.predictions, &baseline, config)
                .map_err(|e| Error::CoverageMismatch(format!("{} vs ensemble: {e}", s.model)))?;
            Ok(ModelComparison {
                model: s.model.clone(),
                significant: result.is_significant(config.alpha),
                result,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn members(m: usize) -> Vec<ModelKind> {
        (0..m).map(|i| ModelKind::ExternalWorker(format!("m{i}"))).collect()
    }

    fn sets_from_patterns(patterns: &[u32], m: usize) -> Vec<PredictionSet> {
        members(m)
            .into_iter()
            .enumerate()
            .map(|(j, model)| PredictionSet {
                model,
                predictions: patterns
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (format!("n{i:04}"), Label::from_bool(p >> j & 1 == 1)))
                    .collect(),
                predict_seconds: 0.0,
            })
            .collect()
    }

    #[test]
    fn five_of_nine() {
        let cfg = EnsembleConfig::majority(members(9));
        assert_eq!(cfg.effective_threshold(), 5);
        let out = vote(&sets_from_patterns(&[0b11111, 0b1111], 9), &cfg).unwrap();
        assert_eq!(out[0].final_label, Label::Yes);
        assert_eq!(out[1].final_label, Label::No);
        assert_eq!(out[1].yes_count, 4);
    }

    #[test]
    fn missing_member_aborts() {
        let cfg = EnsembleConfig::majority(members(9));
        let mut sets = sets_from_patterns(&[1], 9);
        sets.pop();
        assert!(matches!(vote(&sets, &cfg), Err(Error::CoverageMismatch(_))));
    }

    #[test]
    fn mismatched_ids_abort() {
        let cfg = EnsembleConfig::majority(members(2));
        let mut sets = sets_from_patterns(&[1, 2], 2);
        sets[1].predictions.remove("n0000");
        assert!(vote(&sets, &cfg).is_err());
    }

    #[test]
    fn identical_model_has_p_one_and_constant_yes_matches_binomial() {
        let cfg = EnsembleConfig::majority(members(3));
        let patterns: Vec<u32> = (0..40).map(|i| if i % 4 == 0 { 0 } else { 0b111 }).collect();
        let sets = sets_from_patterns(&patterns, 3);
        let ens = vote(&sets, &cfg).unwrap();
        let cmp = compare_to_ensemble(&sets, &ens, &TestConfig::default()).unwrap();
        assert_eq!(cmp.len(), 3);
        assert!(cmp.iter().all(|c| c.result.p_value == Some(1.0)));

        let all_yes = PredictionSet {
            model: ModelKind::ExternalWorker("const".into()),
            predictions: ens.iter().map(|e| (e.narrative_id.clone(), Label::Yes)).collect(),
            predict_seconds: 0.0,
        };
        let r = &compare_to_ensemble(&[all_yes], &ens, &TestConfig::default()).unwrap()[0];
        assert_eq!(r.result.p_value, Some(2.0 * 0.5f64.powi(10)));
    }

    #[test]
    fn json_shape() {
        let cfg = EnsembleConfig::majority(vec![ModelKind::RandomForest]);
        let sets = vec![PredictionSet {
            model: ModelKind::RandomForest,
            predictions: [("a".to_string(), Label::Yes)].into(),
            predict_seconds: 0.0,
        }];
        let v = serde_json::to_value(&vote(&sets, &cfg).unwrap()[0]).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"narrative_id": "a", "votes": {"random_forest": "yes"}, "yes_count": 1, "final": "yes"})
        );
    }
}
