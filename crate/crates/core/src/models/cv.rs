//! Seeded, optionally stratified k-fold cross-validation.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{predict, train, Hyperparams, LabeledExample, ModelKind, PredictionSet};
use crate::{derive_seed, Error, Label, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub k: usize,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            k: 10,
            seed: 0,
            stratified: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldStats {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub train_seconds: f64,
    pub predict_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    /// One out-of-fold prediction per input id.
    pub predictions: PredictionSet,
    pub folds: Vec<FoldStats>,
}

/// Test-fold membership as ids. Inputs are sorted by id first, so the
/// folds depend only on the (id, label) set and the seed.
///
/// Stratified folds deal each class round-robin after a seeded shuffle,
/// continuing from the fold where the previous class stopped; fold sizes
/// and per-class counts then differ by at most one across folds.
pub fn stratified_folds(labels: &[(String, Label)], cv: &CvConfig) -> Result<Vec<Vec<String>>> {
    let n = labels.len();
    if cv.k < 2 {
        return Err(Error::InvalidArgument(format!("k = {} (need at least 2)", cv.k)));
    }
    if cv.k > n {
        return Err(Error::InvalidArgument(format!("k = {} exceeds {n} samples", cv.k)));
    }
    let mut sorted: Vec<&(String, Label)> = labels.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    if let Some(w) = sorted.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::InvalidArgument(format!("duplicate id {}", w[0].0)));
    }

    let groups: Vec<Vec<&String>> = if cv.stratified {
        let yes: Vec<&String> = sorted.iter().filter(|e| e.1.is_yes()).map(|e| &e.0).collect();
        let no: Vec<&String> = sorted.iter().filter(|e| !e.1.is_yes()).map(|e| &e.0).collect();
        let smallest = yes.len().min(no.len());
        if cv.k > smallest {
            return Err(Error::StratificationInfeasible { k: cv.k, smallest });
        }
        vec![yes, no]
    } else {
        vec![sorted.iter().map(|e| &e.0).collect()]
    };

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cv.seed, "cv-folds"));
    let mut folds = vec![Vec::new(); cv.k];
    let mut next = 0;
    for mut group in groups {
        group.shuffle(&mut rng);
        for id in group {
            folds[next].push(id.clone());
            next = (next + 1) % cv.k;
        }
    }
    for f in &mut folds {
        f.sort();
    }
    Ok(folds)
}

/// Generic driver: `fit_predict(fold, train_ids, test_ids)` returns labels
/// for exactly `test_ids` plus (train, predict) seconds.
pub fn cross_validate_with<F>(
    model: ModelKind,
    labels: &[(String, Label)],
    cv: &CvConfig,
    mut fit_predict: F,
) -> Result<CvOutcome>
where
    F: FnMut(usize, &[String], &[String]) -> Result<(BTreeMap<String, Label>, f64, f64)>,
{
    let folds = stratified_folds(labels, cv)?;
    let mut predictions = BTreeMap::new();
    let mut stats = Vec::with_capacity(folds.len());
    for (f, test) in folds.iter().enumerate() {
        let test_set: BTreeSet<&String> = test.iter().collect();
        let mut train_ids: Vec<String> = labels
            .iter()
            .filter(|(id, _)| !test_set.contains(id))
            .map(|(id, _)| id.clone())
            .collect();
        train_ids.sort();
        let (fold_pred, train_seconds, predict_seconds) = fit_predict(f, &train_ids, test)?;
        if fold_pred.len() != test.len() || !test.iter().all(|id| fold_pred.contains_key(id)) {
            return Err(Error::CoverageMismatch(format!(
                "fold {f}: {} predictions for {} test ids",
                fold_pred.len(),
                test.len()
            )));
        }
        predictions.extend(fold_pred);
        stats.push(FoldStats {
            fold: f,
            n_train: train_ids.len(),
            n_test: test.len(),
            train_seconds,
            predict_seconds,
        });
    }
    let predict_seconds = stats.iter().map(|s| s.predict_seconds).sum();
    Ok(CvOutcome {
        predictions: PredictionSet {
            model,
            predictions,
            predict_seconds,
        },
        folds: stats,
    })
}

/// k-fold cross-validation of a native learner. Each fold trains with a
/// seed derived from `params.seed` and the fold number.
pub fn cross_validate(
    kind: &ModelKind,
    examples: &[LabeledExample],
    params: &Hyperparams,
    cv: &CvConfig,
) -> Result<CvOutcome> {
    let by_id: BTreeMap<&String, &LabeledExample> = examples.iter().map(|e| (&e.id, e)).collect();
    let labels: Vec<(String, Label)> = examples.iter().map(|e| (e.id.clone(), e.label)).collect();
    cross_validate_with(kind.clone(), &labels, cv, |fold, train_ids, test_ids| {
        let train_set: Vec<LabeledExample> = train_ids.iter().map(|id| by_id[id].clone()).collect();
        let fold_params = Hyperparams {
            seed: derive_seed(params.seed, &format!("fold-{fold}")),
            ..params.clone()
        };
        let model = train(kind, &train_set, &fold_params)?;
        let pred = predict(&model, test_ids.iter().map(|id| (id, &by_id[id].vector)))?;
        Ok((pred.predictions, model.train_seconds, pred.predict_seconds))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(yes: usize, no: usize) -> Vec<(String, Label)> {
        (0..yes + no)
            .map(|i| (format!("n{i:05}"), Label::from_bool(i < yes)))
            .collect()
    }

    #[test]
    fn fold_sizes_for_2880() {
        let folds = stratified_folds(&labels(2518, 362), &CvConfig::default()).unwrap();
        assert!(folds.iter().all(|f| f.len() == 288));
    }

    #[test]
    fn leave_one_out() {
        let cv = CvConfig { k: 12, stratified: false, seed: 1 };
        let folds = stratified_folds(&labels(7, 5), &cv).unwrap();
        assert_eq!(folds.len(), 12);
        assert!(folds.iter().all(|f| f.len() == 1));
    }

    #[test]
    fn argument_errors() {
        let l = labels(8, 3);
        assert!(matches!(
            stratified_folds(&l, &CvConfig { k: 1, ..Default::default() }),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            stratified_folds(&l, &CvConfig { k: 12, ..Default::default() }),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            stratified_folds(&l, &CvConfig { k: 4, ..Default::default() }),
            Err(Error::StratificationInfeasible { k: 4, smallest: 3 })
        ));
        assert!(stratified_folds(&l, &CvConfig { k: 4, stratified: false, seed: 0 }).is_ok());
    }

    proptest! {
        #[test]
        fn folds_partition_and_stay_stratified(yes in 2usize..200, no in 2usize..60, k in 2usize..12, seed in any::<u64>()) {
            prop_assume!(k <= yes.min(no));
            let l = labels(yes, no);
            let folds = stratified_folds(&l, &CvConfig { k, seed, stratified: true }).unwrap();
            let mut all: Vec<&String> = folds.iter().flatten().collect();
            all.sort();
            all.dedup();
            prop_assert_eq!(all.len(), yes + no);
            prop_assert_eq!(folds.iter().map(Vec::len).sum::<usize>(), yes + no);
            let n = (yes + no) as f64;
            let yes_ids: BTreeSet<&String> = l.iter().filter(|e| e.1.is_yes()).map(|e| &e.0).collect();
            for f in &folds {
                let fy = f.iter().filter(|id| yes_ids.contains(id)).count() as f64;
                let expected = f.len() as f64 * yes as f64 / n;
                prop_assert!((fy - expected).abs() <= 1.0 + 1e-9, "fold yes {} vs expected {}", fy, expected);
            }
        }

        #[test]
        fn folds_ignore_input_order(seed in any::<u64>(), rot in 0usize..40) {
            let mut l = labels(30, 10);
            let a = stratified_folds(&l, &CvConfig { k: 5, seed, stratified: true }).unwrap();
            l.rotate_left(rot);
            l.reverse();
            let b = stratified_folds(&l, &CvConfig { k: 5, seed, stratified: true }).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
