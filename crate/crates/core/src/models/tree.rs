//! Binary split trees over sparse rows.
//!
//! Both the Gini classification tree (forest base learner) and the
//! gradient regression tree (boosting base learner) grow through the same
//! split search: every node statistic is a pair of weights, `[no, yes]`
//! class weights for classification or `[gradient, hessian]` sums for
//! regression. Absent features read as 0 and `x <= threshold` goes left.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::features::SparseVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Leaf value reached by `x`: a Yes probability for classification
    /// trees, an additive score for regression trees.
    pub fn evaluate(&self, x: &SparseVector) -> f64 {
        let mut at = 0usize;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if x.get(feature) <= threshold { left } else { right } as usize;
                }
            }
        }
    }

    pub fn leaf_index(&self, x: &SparseVector) -> usize {
        let mut at = 0usize;
        while let Node::Split {
            feature,
            threshold,
            left,
            right,
        } = self.nodes[at]
        {
            at = if x.get(feature) <= threshold { left } else { right } as usize;
        }
        at
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => {
                    1 + go(nodes, left as usize).max(go(nodes, right as usize))
                }
            }
        }
        go(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

/// Feature-major copy of the training rows, for scanning one feature at a
/// time without touching every row.
pub(crate) struct Columns {
    /// `columns[f]` lists `(row, value)` for rows where feature f is stored.
    columns: Vec<Vec<(u32, f64)>>,
}

impl Columns {
    pub fn new(rows: &[&SparseVector], dimension: usize) -> Self {
        let mut columns = vec![Vec::new(); dimension];
        for (r, row) in rows.iter().enumerate() {
            for &(f, v) in &row.entries {
                columns[f as usize].push((r as u32, v));
            }
        }
        Columns { columns }
    }
}

pub(crate) type Stat = [f64; 2];

fn add(a: &mut Stat, b: Stat) {
    a[0] += b[0];
    a[1] += b[1];
}

fn sub(a: Stat, b: Stat) -> Stat {
    [a[0] - b[0], a[1] - b[1]]
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Split {
    pub feature: u32,
    pub threshold: f64,
    pub gain: f64,
}

/// Which features a node may split on.
pub(crate) enum FeatureChoice<'r, R: Rng> {
    All,
    Sample { count: usize, rng: &'r mut R },
}

pub(crate) struct Grower<'a> {
    pub rows: &'a [&'a SparseVector],
    pub columns: &'a Columns,
    /// Per-row statistic; rows with zero weight are never placed in a node.
    pub stats: &'a [Stat],
    /// Node membership marker, reused across nodes.
    node_of: Vec<u32>,
    scratch: Vec<(f64, Stat)>,
}

impl<'a> Grower<'a> {
    pub fn new(rows: &'a [&'a SparseVector], columns: &'a Columns, stats: &'a [Stat]) -> Self {
        Grower {
            rows,
            columns,
            stats,
            node_of: vec![u32::MAX; rows.len()],
            scratch: Vec::new(),
        }
    }

    pub fn total(&self, members: &[u32]) -> Stat {
        let mut t = [0.0, 0.0];
        for &r in members {
            add(&mut t, self.stats[r as usize]);
        }
        t
    }

    /// Best split of `members` under `score`, which rates a (left, right)
    /// statistic pair; the returned gain is `score(l, r) - parent_score`.
    pub fn best_split<R: Rng>(
        &mut self,
        node_id: u32,
        members: &[u32],
        choice: FeatureChoice<'_, R>,
        parent_score: f64,
        score: impl Fn(Stat, Stat) -> f64,
    ) -> Option<Split> {
        for &r in members {
            self.node_of[r as usize] = node_id;
        }
        let mut present: Vec<u32> = members
            .iter()
            .flat_map(|&r| self.rows[r as usize].entries.iter().map(|&(f, _)| f))
            .collect();
        present.sort_unstable();
        present.dedup();
        if let FeatureChoice::Sample { count, rng } = choice {
            if count < present.len() {
                let (chosen, _) = present.partial_shuffle(rng, count);
                let mut chosen = chosen.to_vec();
                chosen.sort_unstable();
                present = chosen;
            }
        }

        let total = self.total(members);
        let n = members.len();
        let mut best: Option<Split> = None;
        for &f in &present {
            self.scratch.clear();
            let mut nonzero = [0.0, 0.0];
            for &(r, v) in &self.columns.columns[f as usize] {
                if self.node_of[r as usize] == node_id && v != 0.0 {
                    let s = self.stats[r as usize];
                    add(&mut nonzero, s);
                    self.scratch.push((v, s));
                }
            }
            if self.scratch.len() < n {
                self.scratch.push((0.0, sub(total, nonzero)));
            }
            if self.scratch.len() < 2 {
                continue;
            }
            self.scratch
                .sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));

            let mut left = [0.0, 0.0];
            let mut i = 0;
            while i < self.scratch.len() {
                let v = self.scratch[i].0;
                while i < self.scratch.len() && self.scratch[i].0 == v {
                    add(&mut left, self.scratch[i].1);
                    i += 1;
                }
                if i == self.scratch.len() {
                    break;
                }
                let gain = score(left, sub(total, left)) - parent_score;
                if gain > 1e-12 && best.is_none_or(|b| gain > b.gain + 1e-12) {
                    best = Some(Split {
                        feature: f,
                        threshold: v + (self.scratch[i].0 - v) / 2.0,
                        gain,
                    });
                }
            }
        }
        best
    }

    pub fn partition(&self, members: &[u32], split: &Split) -> (Vec<u32>, Vec<u32>) {
        members
            .iter()
            .partition(|&&r| self.rows[r as usize].get(split.feature) <= split.threshold)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    /// `ceil(sqrt(d))` of the vocabulary size.
    Sqrt,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// `None` grows until leaves are pure or unsplittable.
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub max_features: MaxFeatures,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: None,
            min_samples_split: 2,
            max_features: MaxFeatures::Sqrt,
        }
    }
}

fn gini_weighted(s: Stat) -> f64 {
    let w = s[0] + s[1];
    if w <= 0.0 {
        return 0.0;
    }
    // w * (1 - p0^2 - p1^2)
    w - (s[0] * s[0] + s[1] * s[1]) / w
}

/// Gini classification tree. `weights[i]` multiplies row i (bootstrap
/// counts); rows with weight 0 are left out.
pub fn fit_classification<R: Rng>(
    rows: &[&SparseVector],
    labels: &[bool],
    weights: &[f64],
    dimension: usize,
    params: &TreeParams,
    rng: &mut R,
) -> Tree {
    let stats: Vec<Stat> = labels
        .iter()
        .zip(weights)
        .map(|(&y, &w)| if y { [0.0, w] } else { [w, 0.0] })
        .collect();
    let columns = Columns::new(rows, dimension);
    let mut grower = Grower::new(rows, &columns, &stats);
    let mtry = match params.max_features {
        MaxFeatures::Sqrt => ((dimension as f64).sqrt().ceil() as usize).max(1),
        MaxFeatures::All => usize::MAX,
    };

    let root: Vec<u32> = (0..rows.len() as u32).filter(|&r| weights[r as usize] > 0.0).collect();
    let mut nodes = vec![Node::Leaf { value: 0.5 }];
    let mut stack = vec![(0u32, root, 0usize)];
    while let Some((id, members, depth)) = stack.pop() {
        let total = grower.total(&members);
        let value = if total[0] + total[1] > 0.0 { total[1] / (total[0] + total[1]) } else { 0.5 };
        nodes[id as usize] = Node::Leaf { value };
        let pure = total[0] == 0.0 || total[1] == 0.0;
        if pure
            || members.len() < params.min_samples_split
            || params.max_depth.is_some_and(|d| depth >= d)
        {
            continue;
        }
        let choice = if mtry == usize::MAX {
            FeatureChoice::All
        } else {
            FeatureChoice::Sample { count: mtry, rng: &mut *rng }
        };
        let parent = -gini_weighted(total);
        let Some(split) = grower.best_split(id, &members, choice, parent, |l, r| {
            -(gini_weighted(l) + gini_weighted(r))
        }) else {
            continue;
        };
        let (l, r) = grower.partition(&members, &split);
        let left = nodes.len() as u32;
        nodes.push(Node::Leaf { value: 0.5 });
        nodes.push(Node::Leaf { value: 0.5 });
        nodes[id as usize] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right: left + 1,
        };
        stack.push((left + 1, r, depth + 1));
        stack.push((left, l, depth + 1));
    }
    Tree { nodes }
}

/// Regression tree on `[gradient, hessian]` row statistics with the
/// second-order gain `G_L^2/(H_L+l) + G_R^2/(H_R+l) - G^2/(H+l)`.
/// Leaves hold the unshrunk Newton step `-G/(H+l)`.
pub(crate) fn fit_regression(
    rows: &[&SparseVector],
    columns: &Columns,
    grad_hess: &[Stat],
    max_depth: usize,
    lambda: f64,
) -> (Tree, Vec<Vec<u32>>) {
    let mut grower = Grower::new(rows, columns, grad_hess);
    let score = |s: Stat| s[0] * s[0] / (s[1] + lambda);
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let mut leaf_members = vec![Vec::new()];
    let mut stack = vec![(0u32, (0..rows.len() as u32).collect::<Vec<_>>(), 0usize)];
    while let Some((id, members, depth)) = stack.pop() {
        let total = grower.total(&members);
        nodes[id as usize] = Node::Leaf { value: -total[0] / (total[1] + lambda) };
        let split = if depth < max_depth && members.len() >= 2 {
            grower.best_split::<rand_chacha::ChaCha8Rng>(
                id,
                &members,
                FeatureChoice::All,
                score(total),
                |l, r| score(l) + score(r),
            )
        } else {
            None
        };
        let Some(split) = split else {
            leaf_members[id as usize] = members;
            continue;
        };
        let (l, r) = grower.partition(&members, &split);
        let left = nodes.len() as u32;
        nodes.push(Node::Leaf { value: 0.0 });
        nodes.push(Node::Leaf { value: 0.0 });
        leaf_members.push(Vec::new());
        leaf_members.push(Vec::new());
        nodes[id as usize] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right: left + 1,
        };
        stack.push((left + 1, r, depth + 1));
        stack.push((left, l, depth + 1));
    }
    (Tree { nodes }, leaf_members)
}
