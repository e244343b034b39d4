use serde::{Deserialize, Serialize};

use super::tree::{fit_regression, Columns, Node, Tree};
use crate::features::SparseVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostParams {
    pub rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// L2 penalty on leaf values.
    pub lambda: f64,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams {
            rounds: 100,
            max_depth: 3,
            learning_rate: 0.1,
            lambda: 1.0,
        }
    }
}

/// Gradient-boosted regression trees on the logistic loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedTrees {
    pub base_score: f64,
    pub trees: Vec<Tree>,
    /// Mean training log-loss before the first round and after each round.
    pub loss_history: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `log(1 + exp(-y z))` for y in {-1, +1}, without overflow.
fn logistic_loss(z: f64, yes: bool) -> f64 {
    let m = if yes { z } else { -z };
    if m > 0.0 {
        (-m).exp().ln_1p()
    } else {
        -m + m.exp().ln_1p()
    }
}

impl BoostedTrees {
    pub fn fit(rows: &[&SparseVector], labels: &[bool], dimension: usize, params: &BoostParams) -> Self {
        let n = rows.len();
        let yes = labels.iter().filter(|&&y| y).count() as f64;
        let rate = (yes / n.max(1) as f64).clamp(1e-6, 1.0 - 1e-6);
        let base_score = (rate / (1.0 - rate)).ln();
        let mut scores = vec![base_score; n];
        let columns = Columns::new(rows, dimension);
        let mean_loss = |scores: &[f64]| {
            scores.iter().zip(labels).map(|(&z, &y)| logistic_loss(z, y)).sum::<f64>() / n.max(1) as f64
        };
        let mut loss_history = vec![mean_loss(&scores)];
        let mut trees = Vec::with_capacity(params.rounds);
        let mut gh = vec![[0.0, 0.0]; n];

        for _ in 0..params.rounds {
            for i in 0..n {
                let p = sigmoid(scores[i]);
                gh[i] = [p - if labels[i] { 1.0 } else { 0.0 }, (p * (1.0 - p)).max(1e-12)];
            }
            let (mut tree, leaves) = fit_regression(rows, &columns, &gh, params.max_depth, params.lambda);
            for (node, members) in leaves.iter().enumerate() {
                let Node::Leaf { value } = tree.nodes[node] else { continue };
                if members.is_empty() {
                    continue;
                }
                // Halve the step until this leaf's loss does not increase.
                let before: f64 = members.iter().map(|&r| logistic_loss(scores[r as usize], labels[r as usize])).sum();
                let mut step = value * params.learning_rate;
                let mut accepted = 0.0;
                for _ in 0..20 {
                    let after: f64 = members
                        .iter()
                        .map(|&r| logistic_loss(scores[r as usize] + step, labels[r as usize]))
                        .sum();
                    if after <= before {
                        accepted = step;
                        break;
                    }
                    step /= 2.0;
                }
                tree.nodes[node] = Node::Leaf { value: accepted };
                for &r in members {
                    scores[r as usize] += accepted;
                }
            }
            loss_history.push(mean_loss(&scores));
            trees.push(tree);
        }
        BoostedTrees {
            base_score,
            trees,
            loss_history,
        }
    }

    pub fn raw_score(&self, x: &SparseVector) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.evaluate(x)).sum::<f64>()
    }

    pub fn probability(&self, x: &SparseVector) -> f64 {
        sigmoid(self.raw_score(x))
    }
}
