//! Greedy Gini decision trees and bagged forests over dense real features.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_MAX_DEPTH: usize = 10;
pub const TREE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("{features} feature rows but {labels} labels")]
    LengthMismatch { features: usize, labels: usize },
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        label: usize,
    },
    Split {
        feature: usize,
        /// Samples with `x[feature] <= threshold` go left.
        threshold: f64,
        left: Box<Node>,
        right: Box<Node>,
    },
}

impl Node {
    pub fn depth(&self) -> usize {
        match self {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    fn predict(&self, x: &[f64]) -> usize {
        let mut node = self;
        loop {
            match node {
                Node::Leaf { label } => return *label,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature] <= *threshold {
                        left
                    } else {
                        right
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub version: u32,
    pub max_depth: usize,
    pub n_features: usize,
    pub root: Node,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeConfig {
    pub max_depth: usize,
    pub min_samples_split: usize,
    /// Features examined per split; `None` means all.
    pub max_features: Option<usize>,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self {
            max_depth: DEFAULT_MAX_DEPTH,
            min_samples_split: 2,
            max_features: None,
        }
    }
}

fn gini(counts: &BTreeMap<usize, usize>, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let nf = n as f64;
    1.0 - counts
        .values()
        .map(|&c| {
            let p = c as f64 / nf;
            p * p
        })
        .sum::<f64>()
}

/// Majority label, ties to the smallest label.
fn majority(labels: &[usize], idx: &[usize]) -> usize {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &i in idx {
        *counts.entry(labels[i]).or_default() += 1;
    }
    let mut best = (0usize, 0usize);
    for (&label, &c) in &counts {
        if c > best.1 {
            best = (label, c);
        }
    }
    best.0
}

struct Builder<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    cfg: TreeConfig,
    rng: Option<ChaCha8Rng>,
}

impl Builder<'_> {
    fn best_split(&mut self, idx: &[usize]) -> Option<(usize, f64, Vec<usize>, Vec<usize>)> {
        let p = self.x[0].len();
        let features: Vec<usize> = match (self.cfg.max_features, self.rng.as_mut()) {
            (Some(m), Some(rng)) if m < p => {
                let mut f = sample(rng, p, m).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..p).collect(),
        };
        let n = idx.len();
        let mut total: BTreeMap<usize, usize> = BTreeMap::new();
        for &i in idx {
            *total.entry(self.y[i]).or_default() += 1;
        }
        // (weighted child impurity, feature, threshold)
        let mut best: Option<(f64, usize, f64)> = None;
        for &f in &features {
            let mut order: Vec<usize> = idx.to_vec();
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left: BTreeMap<usize, usize> = BTreeMap::new();
            let mut right = total.clone();
            for k in 0..n - 1 {
                let label = self.y[order[k]];
                *left.entry(label).or_default() += 1;
                let r = right.get_mut(&label).unwrap();
                *r -= 1;
                if *r == 0 {
                    right.remove(&label);
                }
                let (a, b) = (self.x[order[k]][f], self.x[order[k + 1]][f]);
                if a == b {
                    continue;
                }
                let nl = k + 1;
                let nr = n - nl;
                let score = (nl as f64 * gini(&left, nl) + nr as f64 * gini(&right, nr)) / n as f64;
                let threshold = a + (b - a) / 2.0;
                if best.is_none_or(|(s, _, _)| score < s - 1e-15) {
                    best = Some((score, f, threshold));
                }
            }
        }
        let (_, f, t) = best?;
        let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.x[i][f] <= t);
        Some((f, t, l, r))
    }

    fn build(&mut self, idx: &[usize], depth: usize) -> Node {
        let first = self.y[idx[0]];
        let pure = idx.iter().all(|&i| self.y[i] == first);
        if pure || depth >= self.cfg.max_depth || idx.len() < self.cfg.min_samples_split {
            return Node::Leaf {
                label: majority(self.y, idx),
            };
        }
        match self.best_split(idx) {
            Some((feature, threshold, l, r)) => Node::Split {
                feature,
                threshold,
                left: Box::new(self.build(&l, depth + 1)),
                right: Box::new(self.build(&r, depth + 1)),
            },
            None => Node::Leaf {
                label: majority(self.y, idx),
            },
        }
    }
}

fn check_inputs(x: &[Vec<f64>], y: &[usize]) -> Result<usize, TreeError> {
    if x.len() != y.len() {
        return Err(TreeError::LengthMismatch {
            features: x.len(),
            labels: y.len(),
        });
    }
    if x.is_empty() {
        return Err(TreeError::EmptyTrainingSet);
    }
    let p = x[0].len();
    if let Some(bad) = x.iter().find(|r| r.len() != p) {
        return Err(TreeError::DimensionMismatch {
            expected: p,
            got: bad.len(),
        });
    }
    Ok(p)
}

impl DecisionTree {
    pub fn fit(x: &[Vec<f64>], y: &[usize], cfg: TreeConfig) -> Result<Self, TreeError> {
        Self::fit_with_rng(x, y, cfg, None)
    }

    fn fit_with_rng(
        x: &[Vec<f64>],
        y: &[usize],
        cfg: TreeConfig,
        rng: Option<ChaCha8Rng>,
    ) -> Result<Self, TreeError> {
        let p = check_inputs(x, y)?;
        let idx: Vec<usize> = (0..x.len()).collect();
        let mut b = Builder { x, y, cfg, rng };
        let root = if p == 0 {
            Node::Leaf {
                label: majority(y, &idx),
            }
        } else {
            b.build(&idx, 0)
        };
        Ok(Self {
            version: TREE_FORMAT_VERSION,
            max_depth: cfg.max_depth,
            n_features: p,
            root,
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize, TreeError> {
        if x.len() != self.n_features {
            return Err(TreeError::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        Ok(self.root.predict(x))
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub seed: u64,
    pub tree: TreeConfig,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: 25,
            seed: 0,
            tree: TreeConfig::default(),
        }
    }
}

/// Bootstrap-aggregated trees with sqrt(p) features per split unless configured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub version: u32,
    pub n_features: usize,
    pub trees: Vec<DecisionTree>,
}

impl RandomForest {
    pub fn fit(x: &[Vec<f64>], y: &[usize], cfg: ForestConfig) -> Result<Self, TreeError> {
        let p = check_inputs(x, y)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut tree_cfg = cfg.tree;
        if tree_cfg.max_features.is_none() {
            tree_cfg.max_features = Some(((p as f64).sqrt().ceil() as usize).max(1));
        }
        let n = x.len();
        let mut trees = Vec::with_capacity(cfg.n_trees);
        for _ in 0..cfg.n_trees.max(1) {
            let boot: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let bx: Vec<Vec<f64>> = boot.iter().map(|&i| x[i].clone()).collect();
            let by: Vec<usize> = boot.iter().map(|&i| y[i]).collect();
            let tree_rng = ChaCha8Rng::seed_from_u64(rng.random());
            trees.push(DecisionTree::fit_with_rng(
                &bx,
                &by,
                tree_cfg,
                Some(tree_rng),
            )?);
        }
        Ok(Self {
            version: TREE_FORMAT_VERSION,
            n_features: p,
            trees,
        })
    }

    /// Majority vote, ties to the smallest label.
    pub fn predict(&self, x: &[f64]) -> Result<usize, TreeError> {
        let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
        for t in &self.trees {
            *votes.entry(t.predict(x)?).or_default() += 1;
        }
        let mut best = (0, 0);
        for (l, c) in votes {
            if c > best.1 {
                best = (l, c);
            }
        }
        Ok(best.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_label_is_one_leaf() {
        let x = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![0.0, 0.0]];
        let t = DecisionTree::fit(&x, &[2, 2, 2], TreeConfig::default()).unwrap();
        assert_eq!(t.root, Node::Leaf { label: 2 });
        assert_eq!(t.predict(&[100.0, -5.0]).unwrap(), 2);
    }

    #[test]
    fn errors() {
        assert_eq!(
            DecisionTree::fit(&[vec![1.0]], &[0, 1], TreeConfig::default()),
            Err(TreeError::LengthMismatch {
                features: 1,
                labels: 2
            })
        );
        assert_eq!(
            DecisionTree::fit(&[], &[], TreeConfig::default()),
            Err(TreeError::EmptyTrainingSet)
        );
        let t = DecisionTree::fit(&[vec![1.0, 2.0]], &[1], TreeConfig::default()).unwrap();
        assert_eq!(
            t.predict(&[1.0]),
            Err(TreeError::DimensionMismatch {
                expected: 2,
                got: 1
            })
        );
    }

    #[test]
    fn xor_needs_zero_gain_split() {
        let x = vec![
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
        ];
        let y = [0, 1, 1, 0];
        let t = DecisionTree::fit(&x, &y, TreeConfig::default()).unwrap();
        for (xi, yi) in x.iter().zip(y) {
            assert_eq!(t.predict(xi).unwrap(), yi);
        }
    }

    #[test]
    fn depth_limit_respected() {
        let x: Vec<Vec<f64>> = (0..200).map(|i| vec![i as f64]).collect();
        let y: Vec<usize> = (0..200).map(|i| i % 2).collect();
        let t = DecisionTree::fit(
            &x,
            &y,
            TreeConfig {
                max_depth: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(t.depth() <= 3);
    }

    #[test]
    fn serialization_round_trip() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0]];
        let t = DecisionTree::fit(&x, &[0, 1, 1], TreeConfig::default()).unwrap();
        let s = serde_json::to_string(&t).unwrap();
        assert!(s.contains("\"node\":\"split\""));
        let back: DecisionTree = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn forest_is_seeded() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, (i % 7) as f64]).collect();
        let y: Vec<usize> = (0..40).map(|i| usize::from(i >= 20)).collect();
        let cfg = ForestConfig {
            n_trees: 7,
            seed: 3,
            ..Default::default()
        };
        let a = RandomForest::fit(&x, &y, cfg).unwrap();
        let b = RandomForest::fit(&x, &y, cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.predict(&[2.0, 2.0]).unwrap(), 0);
        assert_eq!(a.predict(&[38.0, 3.0]).unwrap(), 1);
    }
}
