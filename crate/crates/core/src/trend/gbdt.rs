//! Binary logistic gradient boosting with exact greedy regression trees.
//!
//! Each round fits a depth-bounded tree to the negative gradient
//! `y - sigmoid(F)` by variance-reduction splits; leaves hold the mean
//! gradient and are applied with the learning rate. Because the logistic
//! Hessian is bounded by 1/4, a mean-gradient step with `rate <= 1` never
//! increases the training loss.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Prior log-odds are clamped to this magnitude.
pub const MAX_BASE_SCORE: f64 = 10.0;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy of raw scores against labels.
pub fn logistic_loss(scores: &[f64], labels: &[bool]) -> f64 {
    let n = scores.len() as f64;
    scores
        .iter()
        .zip(labels)
        .map(|(&f, &y)| {
            // log(1 + e^f) - y f, computed stably
            let softplus = if f > 0.0 { f + (-f).exp().ln_1p() } else { f.exp().ln_1p() };
            softplus - if y { f } else { 0.0 }
        })
        .sum::<f64>()
        / n
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeRef {
    Split(usize),
    Leaf(usize),
}

/// Internal node: `x[feature] < threshold` goes left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub left: NodeRef,
    pub right: NodeRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    /// `splits[0]` is the root when non-empty; otherwise `leaves[0]` is.
    pub splits: Vec<Split>,
    pub leaves: Vec<f64>,
}

impl RegressionTree {
    pub fn root(&self) -> NodeRef {
        if self.splits.is_empty() {
            NodeRef::Leaf(0)
        } else {
            NodeRef::Split(0)
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self.root();
        loop {
            match node {
                NodeRef::Leaf(i) => return self.leaves[i],
                NodeRef::Split(i) => {
                    let s = &self.splits[i];
                    node = if x[s.feature] < s.threshold { s.left } else { s.right };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &RegressionTree, n: NodeRef) -> usize {
            match n {
                NodeRef::Leaf(_) => 0,
                NodeRef::Split(i) => 1 + walk(t, t.splits[i].left).max(walk(t, t.splits[i].right)),
            }
        }
        walk(self, self.root())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedModel {
    pub base_score: f64,
    #[serde(rename = "rate")]
    pub learning_rate: f64,
    pub trees: Vec<RegressionTree>,
    pub n_rounds: usize,
    pub max_depth: usize,
    pub n_features: usize,
    pub seed: u64,
}

impl BoostedModel {
    pub fn raw_score(&self, x: &[f64]) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.raw_score(x))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostParams {
    pub rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self {
            rounds: 100,
            max_depth: 3,
            learning_rate: 0.1,
            min_samples_leaf: 5,
            seed: 0,
        }
    }
}

impl BoostParams {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 || self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err(Error::invalid("rounds, max_depth and min_samples_leaf must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::invalid(format!(
                "learning rate must lie in (0, 1], got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Training trace: the fitted model plus the loss before round 1 and after
/// every round.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: BoostedModel,
    pub losses: Vec<f64>,
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    grad: &'a [f64],
    max_depth: usize,
    min_leaf: usize,
    tree: RegressionTree,
}

impl TreeBuilder<'_> {
    /// `sorted[f]` lists this node's rows ordered by feature `f`.
    fn build(&mut self, sorted: Vec<Vec<usize>>, depth: usize) -> NodeRef {
        let rows = &sorted[0];
        let n = rows.len();
        let total: f64 = rows.iter().map(|&i| self.grad[i]).sum();
        let leaf = |t: &mut RegressionTree| {
            t.leaves.push(total / n as f64);
            NodeRef::Leaf(t.leaves.len() - 1)
        };
        if depth >= self.max_depth || n < 2 * self.min_leaf {
            return leaf(&mut self.tree);
        }

        let parent = total * total / n as f64;
        let mut best: Option<(f64, usize, usize, f64)> = None; // gain, feature, left count, threshold
        for (f, order) in sorted.iter().enumerate() {
            let mut left_sum = 0.0;
            for k in 0..n - 1 {
                left_sum += self.grad[order[k]];
                let nl = k + 1;
                if nl < self.min_leaf || n - nl < self.min_leaf {
                    continue;
                }
                let a = self.x[order[k]][f];
                let b = self.x[order[k + 1]][f];
                if !(a < b) {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / nl as f64 + right_sum * right_sum / (n - nl) as f64 - parent;
                if gain > best.map_or(1e-12, |b| b.0) {
                    let mid = a + 0.5 * (b - a);
                    let thr = if mid > a { mid } else { b };
                    best = Some((gain, f, nl, thr));
                }
            }
        }
        let Some((_, feature, _, threshold)) = best else {
            return leaf(&mut self.tree);
        };

        let go_left: Vec<bool> = {
            let mut v = vec![false; self.x.len()];
            for &i in rows {
                v[i] = self.x[i][feature] < threshold;
            }
            v
        };
        let (mut left, mut right): (Vec<Vec<usize>>, Vec<Vec<usize>>) = (Vec::new(), Vec::new());
        for order in sorted {
            let (l, r): (Vec<usize>, Vec<usize>) = order.into_iter().partition(|&i| go_left[i]);
            left.push(l);
            right.push(r);
        }
        let idx = self.tree.splits.len();
        self.tree.splits.push(Split {
            feature,
            threshold,
            left: NodeRef::Leaf(usize::MAX),
            right: NodeRef::Leaf(usize::MAX),
        });
        let l = self.build(left, depth + 1);
        let r = self.build(right, depth + 1);
        self.tree.splits[idx].left = l;
        self.tree.splits[idx].right = r;
        NodeRef::Split(idx)
    }
}

/// Fits a boosted classifier to feature rows `x` and binary `labels`.
pub fn train_boosted(x: &[Vec<f64>], labels: &[bool], params: &BoostParams) -> Result<TrainReport> {
    params.validate()?;
    if x.is_empty() {
        return Err(Error::EmptyDataset("no training examples".into()));
    }
    if x.len() != labels.len() {
        return Err(Error::invalid("feature rows and labels differ in length"));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(Error::invalid("feature rows must share a non-zero width"));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite feature value"));
    }

    let n = x.len();
    let pos = labels.iter().filter(|y| **y).count() as f64 / n as f64;
    let base = if pos <= 0.0 {
        -MAX_BASE_SCORE
    } else if pos >= 1.0 {
        MAX_BASE_SCORE
    } else {
        (pos / (1.0 - pos)).ln().clamp(-MAX_BASE_SCORE, MAX_BASE_SCORE)
    };

    let presorted: Vec<Vec<usize>> = (0..d)
        .map(|f| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
            idx
        })
        .collect();

    let mut scores = vec![base; n];
    let mut losses = vec![logistic_loss(&scores, labels)];
    let mut trees = Vec::with_capacity(params.rounds);
    let mut grad = vec![0.0; n];
    for _ in 0..params.rounds {
        for i in 0..n {
            grad[i] = (labels[i] as u8 as f64) - sigmoid(scores[i]);
        }
        let mut builder = TreeBuilder {
            x,
            grad: &grad,
            max_depth: params.max_depth,
            min_leaf: params.min_samples_leaf,
            tree: RegressionTree {
                splits: Vec::new(),
                leaves: Vec::new(),
            },
        };
        builder.build(presorted.clone(), 0);
        let tree = builder.tree;
        for i in 0..n {
            scores[i] += params.learning_rate * tree.predict(&x[i]);
        }
        losses.push(logistic_loss(&scores, labels));
        trees.push(tree);
    }
    Ok(TrainReport {
        model: BoostedModel {
            base_score: base,
            learning_rate: params.learning_rate,
            trees,
            n_rounds: params.rounds,
            max_depth: params.max_depth,
            n_features: d,
            seed: params.seed,
        },
        losses,
    })
}
