use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::tree::{grow, GrowParams, SortedColumns, Target, Tree, TreeParams};
use super::{normalize, ClassifierError};
use crate::seed;

/// Single CART tree with Gini impurity over all features.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree {
    pub tree: Tree,
    pub classes: usize,
}

impl DecisionTree {
    pub fn fit(hp: &TreeParams, x: &Matrix, y: &[usize], classes: usize) -> Result<Self, ClassifierError> {
        if hp.max_depth == Some(0) {
            return Err(ClassifierError::Hyperparams("max_depth must be positive".into()));
        }
        let cols = SortedColumns::new(x);
        let tree = grow(
            x,
            &cols,
            Target::Classes { y, classes },
            &vec![1.0; x.rows],
            &GrowParams { max_depth: hp.max_depth, max_features: None },
            None,
        );
        Ok(Self { tree, classes })
    }

    /// Class fractions at the leaf.
    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        normalize(self.tree.leaf_value(x))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaxFeatures {
    #[default]
    Sqrt,
    All,
}

impl MaxFeatures {
    pub fn resolve(self, dim: usize) -> usize {
        match self {
            Self::Sqrt => ((dim as f64).sqrt().floor() as usize).max(1),
            Self::All => dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub trees: usize,
    pub max_depth: Option<usize>,
    #[serde(default = "yes")]
    pub bootstrap: bool,
    #[serde(default)]
    pub max_features: MaxFeatures,
}

fn yes() -> bool {
    true
}

impl Default for ForestParams {
    fn default() -> Self {
        Self { trees: 100, max_depth: None, bootstrap: true, max_features: MaxFeatures::Sqrt }
    }
}

/// Bagged CART trees; each tree's bootstrap draw and per-split feature
/// subsets come from its own derived seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomForest {
    pub trees: Vec<Tree>,
    pub tree_seeds: Vec<u64>,
    pub classes: usize,
}

impl RandomForest {
    pub fn fit(hp: &ForestParams, x: &Matrix, y: &[usize], classes: usize, seed: u64) -> Result<Self, ClassifierError> {
        if hp.trees == 0 || hp.max_depth == Some(0) {
            return Err(ClassifierError::Hyperparams(format!("{hp:?}")));
        }
        let cols = SortedColumns::new(x);
        let grow_params = GrowParams { max_depth: hp.max_depth, max_features: Some(hp.max_features.resolve(x.cols)) };
        let tree_seeds: Vec<u64> = (0..hp.trees).map(|t| seed::derive(seed, &[0xF0, t as u64])).collect();
        let trees = tree_seeds
            .par_iter()
            .map(|&s| {
                let mut rng = seed::rng(s, &[]);
                let mut weights = vec![0.0; x.rows];
                if hp.bootstrap {
                    for _ in 0..x.rows {
                        weights[rng.random_range(0..x.rows)] += 1.0;
                    }
                } else {
                    weights.iter_mut().for_each(|w| *w = 1.0);
                }
                grow(x, &cols, Target::Classes { y, classes }, &weights, &grow_params, Some(&mut rng))
            })
            .collect();
        Ok(Self { trees, tree_seeds, classes })
    }

    /// Fraction of trees voting for each class.
    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let mut votes = vec![0.0; self.classes];
        for t in &self.trees {
            votes[t.vote(x)] += 1.0;
        }
        votes.iter().map(|v| v / self.trees.len() as f64).collect()
    }
}
