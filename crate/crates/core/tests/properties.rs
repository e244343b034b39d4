//! Invariants over randomized inputs.

use std::collections::{BTreeMap, BTreeSet};

use narrative_validity::ensemble::{decide, vote, EnsembleConfig};
use narrative_validity::models::{cross_validate_with, stratified_folds, CvConfig, ModelKind, PredictionSet};
use narrative_validity::stats::{agreement_matrix, ConfusionMatrix2x2, TestConfig};
use narrative_validity::Label;
use proptest::prelude::*;

fn labels_strategy() -> impl Strategy<Value = Vec<(String, Label)>> {
    // Interleaved ids so label order differs from id order.
    (6usize..40, 6usize..40).prop_map(|(yes, no)| {
        (0..yes + no)
            .map(|i| (format!("id{:03}", (i * 41) % 97), Label::from_bool(i < yes)))
            .collect()
    })
}

fn members(m: usize) -> Vec<ModelKind> {
    (0..m).map(|i| ModelKind::ExternalWorker(format!("w{i}"))).collect()
}

proptest! {
    #[test]
    fn vote_is_a_threshold_on_yes_count(
        m in 1usize..8,
        votes in proptest::collection::vec(proptest::collection::vec(any::<bool>(), 8), 1..30),
        t_off in 0usize..8,
    ) {
        let t = 1 + t_off % m;
        let cfg = EnsembleConfig { threshold: Some(t), members: members(m) };
        let sets: Vec<PredictionSet> = members(m).into_iter().enumerate().map(|(j, model)| PredictionSet {
            model,
            predictions: votes.iter().enumerate().map(|(i, v)| (format!("n{i:02}"), Label::from_bool(v[j]))).collect(),
            predict_seconds: 0.0,
        }).collect();
        let out = vote(&sets, &cfg).unwrap();
        for (i, e) in out.iter().enumerate() {
            let yes = votes[i][..m].iter().filter(|&&b| b).count();
            prop_assert_eq!(e.yes_count, yes);
            prop_assert_eq!(e.final_label, Label::from_bool(yes >= t));
            prop_assert_eq!(e.votes.len(), m);
        }
    }

    #[test]
    fn decide_is_monotone(yes in 0usize..20, t in 1usize..20) {
        if decide(yes, t).is_yes() {
            prop_assert!(decide(yes + 1, t).is_yes());
        }
        if !decide(yes, t).is_yes() {
            prop_assert!(!decide(yes, t + 1).is_yes());
        }
    }

    #[test]
    fn folds_partition_and_stratify(labels in labels_strategy(), k in 2usize..6, seed in any::<u64>()) {
        let cv = CvConfig { k, seed, stratified: true };
        let folds = stratified_folds(&labels, &cv).unwrap();
        let all: BTreeSet<&String> = folds.iter().flatten().collect();
        prop_assert_eq!(all.len(), labels.len());
        prop_assert_eq!(folds.iter().map(Vec::len).sum::<usize>(), labels.len());
        let truth: BTreeMap<&String, Label> = labels.iter().map(|(i, l)| (i, *l)).collect();
        let yes: Vec<usize> = folds.iter().map(|f| f.iter().filter(|i| truth[i].is_yes()).count()).collect();
        prop_assert!(yes.iter().max().unwrap() - yes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn cross_validation_predicts_each_id_once(labels in labels_strategy(), k in 2usize..6) {
        let cv = CvConfig { k, seed: 1, stratified: true };
        let mut seen_train = 0;
        let out = cross_validate_with(ModelKind::RandomForest, &labels, &cv, |_, train, test| {
            let train: BTreeSet<&String> = train.iter().collect();
            assert!(test.iter().all(|t| !train.contains(t)), "test id in training set");
            seen_train += train.len();
            Ok((test.iter().map(|id| (id.clone(), Label::Yes)).collect(), 0.0, 0.0))
        }).unwrap();
        prop_assert_eq!(out.predictions.len(), labels.len());
        prop_assert_eq!(seen_train, labels.len() * (k - 1));
    }

    #[test]
    fn agreement_matrix_is_symmetric(
        a in proptest::collection::vec(any::<bool>(), 1..60),
        b_seed in proptest::collection::vec(any::<bool>(), 60),
    ) {
        let mk = |name: &str, v: &[bool]| PredictionSet {
            model: ModelKind::ExternalWorker(name.into()),
            predictions: v.iter().enumerate().map(|(i, &x)| (format!("n{i:02}"), Label::from_bool(x))).collect(),
            predict_seconds: 0.0,
        };
        let sets = [mk("a", &a), mk("b", &b_seed[..a.len()])];
        let m = agreement_matrix(&sets, &TestConfig::default()).unwrap();
        prop_assert_eq!(m.cell(0, 1).agreement, m.cell(1, 0).agreement);
        prop_assert_eq!(m.cell(0, 1).mcnemar_p, m.cell(1, 0).mcnemar_p);
        prop_assert_eq!(m.cell(0, 0).agreement, 1.0);
    }

    #[test]
    fn confusion_counts_add_up(pairs in proptest::collection::vec((any::<bool>(), any::<bool>()), 0..100)) {
        let cm = ConfusionMatrix2x2::from_pairs(pairs.iter().map(|&(p, t)| (Label::from_bool(p), Label::from_bool(t))));
        prop_assert_eq!(cm.total() as usize, pairs.len());
        prop_assert_eq!(cm.tp as usize, pairs.iter().filter(|&&(p, t)| p && t).count());
        prop_assert_eq!(cm.transpose().transpose(), cm);
    }
}
