use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{fit_classification, MaxFeatures, Tree, TreeParams};
use crate::derive_seed;
use crate::features::SparseVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub max_features: MaxFeatures,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: None,
            min_samples_split: 2,
            max_features: MaxFeatures::Sqrt,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
}

impl Forest {
    pub fn fit(
        rows: &[&SparseVector],
        labels: &[bool],
        dimension: usize,
        params: &ForestParams,
        seed: u64,
    ) -> Forest {
        let tree_params = TreeParams {
            max_depth: params.max_depth,
            min_samples_split: params.min_samples_split,
            max_features: params.max_features,
        };
        let n = rows.len();
        let trees = (0..params.n_trees.max(1))
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("tree-{t}")));
                let mut weights = vec![0.0; n];
                if params.bootstrap {
                    let pick = Uniform::new(0, n);
                    for _ in 0..n {
                        weights[pick.sample(&mut rng)] += 1.0;
                    }
                } else {
                    weights.fill(1.0);
                }
                fit_classification(rows, labels, &weights, dimension, &tree_params, &mut rng)
            })
            .collect();
        Forest { trees }
    }

    /// Fraction of trees voting Yes; a tree votes Yes when its leaf
    /// probability is at least 0.5.
    pub fn yes_fraction(&self, x: &SparseVector) -> f64 {
        let yes = self.trees.iter().filter(|t| t.evaluate(x) >= 0.5).count();
        yes as f64 / self.trees.len() as f64
    }
}
