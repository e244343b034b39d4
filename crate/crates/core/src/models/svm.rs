use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::SparseVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmParams {
    /// L2 regularization strength.
    pub lambda: f64,
    pub epochs: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            lambda: 1e-4,
            epochs: 10,
        }
    }
}

/// Linear SVM trained by stochastic subgradient descent on the
/// regularized hinge loss, step size `1 / (lambda * t)`. The bias is an
/// extra weight on a constant feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearSvm {
    pub fn fit(rows: &[&SparseVector], labels: &[bool], dimension: usize, params: &SvmParams, seed: u64) -> Self {
        let lambda = params.lambda;
        // w = scale * v keeps the shrink step O(1).
        let mut v = vec![0.0; dimension + 1];
        let mut scale = 1.0;
        let mut order: Vec<usize> = (0..rows.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = 0u64;
        for _ in 0..params.epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                t += 1;
                let eta = 1.0 / (lambda * t as f64);
                let y = if labels[i] { 1.0 } else { -1.0 };
                let x = rows[i];
                let margin = y * scale * (x.dot_dense(&v) + v[dimension]);
                let shrink = 1.0 - eta * lambda;
                if shrink <= 0.0 {
                    v.fill(0.0);
                    scale = 1.0;
                } else {
                    scale *= shrink;
                }
                if margin < 1.0 {
                    let step = eta * y / scale;
                    for &(j, w) in &x.entries {
                        v[j as usize] += step * w;
                    }
                    v[dimension] += step;
                }
                if scale < 1e-9 {
                    v.iter_mut().for_each(|w| *w *= scale);
                    scale = 1.0;
                }
            }
        }
        let bias = v.pop().unwrap_or(0.0) * scale;
        v.iter_mut().for_each(|w| *w *= scale);
        LinearSvm { weights: v, bias }
    }

    pub fn decision(&self, x: &SparseVector) -> f64 {
        x.dot_dense(&self.weights) + self.bias
    }

    pub fn hinge_loss(&self, rows: &[&SparseVector], labels: &[bool]) -> f64 {
        let total: f64 = rows
            .iter()
            .zip(labels)
            .map(|(x, &y)| {
                let y = if y { 1.0 } else { -1.0 };
                (1.0 - y * self.decision(x)).max(0.0)
            })
            .sum();
        total / rows.len().max(1) as f64
    }
}
