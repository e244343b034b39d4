//! Binary classifiers over TF-IDF vectors, cross-validation, and the
//! external-worker adapter.
//!
//! Native learners: [`ModelKind::RandomForest`], [`ModelKind::LinearSvm`]
//! and [`ModelKind::BoostedTrees`]. Anything else joins as
//! [`ModelKind::ExternalWorker`] through [`worker::worker_session`].

pub mod boost;
pub mod cv;
pub mod forest;
pub mod svm;
pub mod tree;
pub mod worker;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use boost::{BoostParams, BoostedTrees};
pub use cv::{cross_validate, cross_validate_with, stratified_folds, CvConfig, CvOutcome, FoldStats};
pub use forest::{Forest, ForestParams};
pub use svm::{LinearSvm, SvmParams};
pub use tree::MaxFeatures;
pub use worker::{run_stub_worker, worker_session, StubMode, TextExample, WorkerCommand, WorkerOutcome};

use crate::features::SparseVector;
use crate::{derive_seed, Error, Label, Result};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelKind {
    RandomForest,
    LinearSvm,
    BoostedTrees,
    ExternalWorker(String),
}

impl ModelKind {
    pub const NATIVE: [ModelKind; 3] = [ModelKind::RandomForest, ModelKind::LinearSvm, ModelKind::BoostedTrees];

    pub fn is_native(&self) -> bool {
        !matches!(self, ModelKind::ExternalWorker(_))
    }

    /// File-name friendly form (`worker:bert` becomes `worker-bert`).
    pub fn slug(&self) -> String {
        self.to_string().replace(':', "-")
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::RandomForest => f.write_str("random_forest"),
            ModelKind::LinearSvm => f.write_str("linear_svm"),
            ModelKind::BoostedTrees => f.write_str("boosted_trees"),
            ModelKind::ExternalWorker(name) => write!(f, "worker:{name}"),
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random_forest" | "rf" => Ok(ModelKind::RandomForest),
            "linear_svm" | "svm" => Ok(ModelKind::LinearSvm),
            "boosted_trees" | "boost" => Ok(ModelKind::BoostedTrees),
            _ => match s.strip_prefix("worker:") {
                Some(name) if !name.is_empty() => Ok(ModelKind::ExternalWorker(name.to_string())),
                _ => Err(Error::InvalidArgument(format!("unknown model kind `{s}`"))),
            },
        }
    }
}

impl Serialize for ModelKind {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ModelKind {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub vector: SparseVector,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub seed: u64,
    /// Scores at or above this are Yes, so exact ties go to the majority class.
    pub decision_threshold: f64,
    /// Train a constant classifier on single-class data instead of failing.
    pub allow_constant: bool,
    pub forest: ForestParams,
    pub svm: SvmParams,
    pub boost: BoostParams,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            seed: 0,
            decision_threshold: 0.5,
            allow_constant: false,
            forest: ForestParams::default(),
            svm: SvmParams::default(),
            boost: BoostParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "learner", rename_all = "snake_case")]
pub enum ModelState {
    Forest(Forest),
    Svm(LinearSvm),
    Boosted(BoostedTrees),
    Constant { label: Label },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub state: ModelState,
    /// Vocabulary size the model was trained against.
    pub feature_dim: usize,
    pub decision_threshold: f64,
    pub train_seconds: f64,
}

impl TrainedModel {
    /// Yes-score in [0, 1]: vote fraction, squashed margin or probability.
    pub fn score(&self, x: &SparseVector) -> f64 {
        match &self.state {
            ModelState::Forest(f) => f.yes_fraction(x),
            ModelState::Svm(s) => 1.0 / (1.0 + (-s.decision(x)).exp()),
            ModelState::Boosted(b) => b.probability(x),
            ModelState::Constant { label } => {
                if label.is_yes() {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    pub fn classify(&self, x: &SparseVector) -> Label {
        Label::from_bool(self.score(x) >= self.decision_threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub model: ModelKind,
    pub predictions: BTreeMap<String, Label>,
    pub predict_seconds: f64,
}

impl PredictionSet {
    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }

    pub fn yes_count(&self) -> usize {
        self.predictions.values().filter(|l| l.is_yes()).count()
    }

    /// The subset of predictions for `ids`; unknown ids are an error.
    pub fn restrict<'a>(&self, ids: impl IntoIterator<Item = &'a String>) -> Result<PredictionSet> {
        let mut predictions = BTreeMap::new();
        let mut missing = Vec::new();
        for id in ids {
            match self.predictions.get(id) {
                Some(&l) => {
                    predictions.insert(id.clone(), l);
                }
                None => missing.push(id.clone()),
            }
        }
        if !missing.is_empty() {
            return Err(Error::UnknownIds(missing));
        }
        Ok(PredictionSet {
            model: self.model.clone(),
            predictions,
            predict_seconds: self.predict_seconds,
        })
    }
}

fn check_dimension(expected: usize, v: &SparseVector) -> Result<()> {
    if v.dimension != expected {
        return Err(Error::DimensionMismatch {
            expected,
            found: v.dimension,
        });
    }
    Ok(())
}

/// Trains one native learner. Deterministic given `params.seed`.
pub fn train(kind: &ModelKind, examples: &[LabeledExample], params: &Hyperparams) -> Result<TrainedModel> {
    let Some(first) = examples.first() else {
        return Err(Error::InvalidArgument("empty training set".into()));
    };
    let dim = first.vector.dimension;
    for e in examples {
        check_dimension(dim, &e.vector)?;
    }
    let start = Instant::now();
    let rows: Vec<&SparseVector> = examples.iter().map(|e| &e.vector).collect();
    let labels: Vec<bool> = examples.iter().map(|e| e.label.is_yes()).collect();
    let yes = labels.iter().filter(|&&y| y).count();
    let state = if yes == 0 || yes == labels.len() {
        let label = Label::from_bool(yes > 0);
        if !params.allow_constant {
            return Err(Error::DegenerateTraining(label));
        }
        ModelState::Constant { label }
    } else {
        let seed = derive_seed(params.seed, &kind.to_string());
        match kind {
            ModelKind::RandomForest => ModelState::Forest(Forest::fit(&rows, &labels, dim, &params.forest, seed)),
            ModelKind::LinearSvm => ModelState::Svm(LinearSvm::fit(&rows, &labels, dim, &params.svm, seed)),
            ModelKind::BoostedTrees => ModelState::Boosted(BoostedTrees::fit(&rows, &labels, dim, &params.boost)),
            ModelKind::ExternalWorker(name) => {
                return Err(Error::InvalidArgument(format!(
                    "worker:{name} trains inside its own process; use worker_session"
                )))
            }
        }
    };
    Ok(TrainedModel {
        kind: kind.clone(),
        state,
        feature_dim: dim,
        decision_threshold: params.decision_threshold,
        train_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Classifies every vector; the result covers exactly the given ids.
pub fn predict<'a>(
    model: &TrainedModel,
    vectors: impl IntoIterator<Item = (&'a String, &'a SparseVector)>,
) -> Result<PredictionSet> {
    let start = Instant::now();
    let mut predictions = BTreeMap::new();
    for (id, v) in vectors {
        check_dimension(model.feature_dim, v)?;
        predictions.insert(id.clone(), model.classify(v));
    }
    Ok(PredictionSet {
        model: model.kind.clone(),
        predictions,
        predict_seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::tree::fit_classification;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn blobs(n: usize) -> Vec<LabeledExample> {
        (0..n)
            .map(|i| {
                let yes = i % 2 == 0;
                let s = if yes { 1.0 } else { -1.0 };
                let j = (i % 5) as f64 * 0.1;
                LabeledExample {
                    id: format!("b{i:03}"),
                    vector: SparseVector::new(vec![(0, s * (1.5 + j)), (1, s * (0.5 + j)), (2, j)], 3).unwrap(),
                    label: Label::from_bool(yes),
                }
            })
            .collect()
    }

    fn training_accuracy(model: &TrainedModel, data: &[LabeledExample]) -> f64 {
        let hits = data.iter().filter(|e| model.classify(&e.vector) == e.label).count();
        hits as f64 / data.len() as f64
    }

    #[test]
    fn separable_blobs_are_learned_by_every_native_model() {
        let data = blobs(60);
        for kind in ModelKind::NATIVE {
            let model = train(&kind, &data, &Hyperparams::default()).unwrap();
            assert_eq!(training_accuracy(&model, &data), 1.0, "{kind}");
            assert!(model.train_seconds >= 0.0);
        }
    }

    #[test]
    fn single_class_needs_opt_in() {
        let data: Vec<_> = blobs(10).into_iter().filter(|e| e.label.is_yes()).collect();
        let err = train(&ModelKind::LinearSvm, &data, &Hyperparams::default()).unwrap_err();
        assert!(matches!(err, Error::DegenerateTraining(Label::Yes)));
        let params = Hyperparams { allow_constant: true, ..Default::default() };
        let model = train(&ModelKind::LinearSvm, &data, &params).unwrap();
        let all = blobs(10);
        let pred = predict(&model, all.iter().map(|e| (&e.id, &e.vector))).unwrap();
        assert_eq!(pred.yes_count(), 10);
    }

    #[test]
    fn predict_checks_dimension_and_handles_empty_input() {
        let model = train(&ModelKind::LinearSvm, &blobs(20), &Hyperparams::default()).unwrap();
        let empty = predict(&model, std::iter::empty()).unwrap();
        assert!(empty.is_empty());
        assert!(empty.predict_seconds < 0.01);
        let id = "x".to_string();
        let v = SparseVector::empty(7);
        let err = predict(&model, [(&id, &v)]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 3, found: 7 }));
    }

    #[test]
    fn training_is_deterministic() {
        let data = blobs(40);
        for kind in ModelKind::NATIVE {
            let a = train(&kind, &data, &Hyperparams::default()).unwrap();
            let b = train(&kind, &data, &Hyperparams::default()).unwrap();
            assert_eq!(a.state, b.state);
        }
    }

    #[test]
    fn model_kind_round_trips_as_string() {
        for s in ["random_forest", "linear_svm", "boosted_trees", "worker:bert-128"] {
            let k: ModelKind = s.parse().unwrap();
            assert_eq!(k.to_string(), s);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{s}\""));
        }
        assert!("worker:".parse::<ModelKind>().is_err());
        assert!("xgb".parse::<ModelKind>().is_err());
        let mut m = BTreeMap::new();
        m.insert(ModelKind::LinearSvm, Label::Yes);
        assert_eq!(serde_json::to_string(&m).unwrap(), r#"{"linear_svm":"yes"}"#);
    }

    #[test]
    fn trained_model_serializes() {
        let model = train(&ModelKind::BoostedTrees, &blobs(20), &Hyperparams::default()).unwrap();
        let back: TrainedModel = serde_json::from_str(&serde_json::to_string(&model).unwrap()).unwrap();
        assert_eq!(back.state, model.state);
    }

    #[test]
    fn boosted_loss_is_non_increasing_on_text_like_data() {
        let data: Vec<LabeledExample> = (0..80)
            .map(|i| {
                let mut e = vec![((i % 11) as u32, 1.0), (11 + (i % 3) as u32, 0.5)];
                if i % 4 == 0 {
                    e.push((20, 0.7));
                }
                LabeledExample {
                    id: format!("{i}"),
                    vector: SparseVector::new(e, 24).unwrap(),
                    label: Label::from_bool(i % 4 != 0 || i % 8 == 0),
                }
            })
            .collect();
        let model = train(&ModelKind::BoostedTrees, &data, &Hyperparams::default()).unwrap();
        let ModelState::Boosted(b) = &model.state else { panic!() };
        assert_eq!(b.loss_history.len(), 101);
        for w in b.loss_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn one_tree_forest_equals_its_base_tree(
            rows in prop::collection::vec(prop::collection::vec((0u32..6, 0.1f64..3.0), 0..4), 4..30),
            labels in prop::collection::vec(any::<bool>(), 30),
        ) {
            let data: Vec<LabeledExample> = rows.iter().enumerate().map(|(i, r)| {
                let mut entries = r.clone();
                entries.sort_by_key(|e| e.0);
                entries.dedup_by_key(|e| e.0);
                LabeledExample {
                    id: format!("{i:02}"),
                    vector: SparseVector::new(entries, 6).unwrap(),
                    label: Label::from_bool(labels[i]),
                }
            }).collect();
            prop_assume!(data.iter().any(|e| e.label.is_yes()) && data.iter().any(|e| !e.label.is_yes()));
            let params = Hyperparams {
                forest: ForestParams { n_trees: 1, bootstrap: false, max_features: MaxFeatures::All, max_depth: None, min_samples_split: 2 },
                ..Default::default()
            };
            let model = train(&ModelKind::RandomForest, &data, &params).unwrap();
            let refs: Vec<&SparseVector> = data.iter().map(|e| &e.vector).collect();
            let ys: Vec<bool> = data.iter().map(|e| e.label.is_yes()).collect();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
            let tree = fit_classification(&refs, &ys, &vec![1.0; refs.len()], 6, &tree::TreeParams {
                max_depth: None, min_samples_split: 2, max_features: MaxFeatures::All,
            }, &mut rng);
            for e in &data {
                prop_assert_eq!(model.classify(&e.vector), Label::from_bool(tree.evaluate(&e.vector) >= 0.5));
            }
        }
    }
}
