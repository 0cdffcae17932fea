//! Gradient-boosted regression trees on the softmax cross-entropy.
//!
//! Each round computes class probabilities from the accumulated scores, fits
//! one depth-limited regression tree per class to the residuals
//! `1[y = c] - p_c`, and adds `rate × leaf mean` to that class's score. No
//! second-order (Hessian) step is taken.

use serde::{Deserialize, Serialize};

use super::matrix::{to_f32_exact, Matrix};
use super::tree::{grow, GrowParams, Node, SortedColumns, Target, Tree};
use super::{softmax, ClassifierError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostParams {
    pub rounds: usize,
    pub rate: f64,
    pub max_depth: usize,
}

impl Default for BoostParams {
    fn default() -> Self {
        Self { rounds: 100, rate: 0.1, max_depth: 3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostedTrees {
    /// `rounds[r][c]`: the tree fitted for class `c` in round `r`.
    pub rounds: Vec<Vec<Tree>>,
    pub rate: f64,
    pub classes: usize,
}

impl BoostedTrees {
    pub fn fit(hp: &BoostParams, x: &Matrix, y: &[usize], classes: usize) -> Result<Self, ClassifierError> {
        if hp.rounds == 0 || hp.max_depth == 0 || !(hp.rate > 0.0) {
            return Err(ClassifierError::Hyperparams(format!("{hp:?}")));
        }
        let rate = to_f32_exact(hp.rate);
        let cols = SortedColumns::new(x);
        let params = GrowParams { max_depth: Some(hp.max_depth), max_features: None };
        let ones = vec![1.0; x.rows];
        let mut scores = vec![vec![0.0; classes]; x.rows];
        let mut rounds = Vec::with_capacity(hp.rounds);
        for _ in 0..hp.rounds {
            let probs: Vec<Vec<f64>> = scores.iter().map(|s| softmax(s)).collect();
            let mut round = Vec::with_capacity(classes);
            for c in 0..classes {
                let residual: Vec<f64> =
                    (0..x.rows).map(|i| if y[i] == c { 1.0 } else { 0.0 } - probs[i][c]).collect();
                let mut tree = grow(x, &cols, Target::Values(&residual), &ones, &params, None);
                for node in tree.nodes.iter_mut() {
                    if let Node::Leaf { value } = node {
                        value[0] = to_f32_exact(value[0]);
                    }
                }
                for (i, s) in scores.iter_mut().enumerate() {
                    s[c] += rate * tree.leaf_value(x.row(i))[0];
                }
                round.push(tree);
            }
            rounds.push(round);
        }
        Ok(Self { rounds, rate, classes })
    }

    pub fn raw_scores(&self, x: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; self.classes];
        for round in &self.rounds {
            for (c, tree) in round.iter().enumerate() {
                s[c] += self.rate * tree.leaf_value(x)[0];
            }
        }
        s
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.raw_scores(x))
    }
}
