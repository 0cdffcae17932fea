//! CART growth shared by the decision tree, random forest and boosting.
//!
//! Nodes are grown depth first, left child before right, and stored in
//! creation order with the root at index 0. Split search scans every
//! candidate feature in ascending index order and every threshold in
//! ascending value order, keeping the first strictly best split.

use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::{argmax, ClassifierError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    /// `None` grows until leaves are pure.
    pub max_depth: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    /// `x[feature] <= threshold` goes left.
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    /// Classification: weighted class counts. Regression: `[mean]`.
    Leaf { value: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
                Node::Leaf { .. } => return i,
            }
        }
    }

    pub fn leaf_value(&self, x: &[f64]) -> &[f64] {
        match &self.nodes[self.leaf_index(x)] {
            Node::Leaf { value } => value,
            Node::Split { .. } => unreachable!("leaf_index stops at leaves"),
        }
    }

    /// Majority class at the leaf reached by `x`, ties to the lower index.
    pub fn vote(&self, x: &[f64]) -> usize {
        argmax(self.leaf_value(x))
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Split { left, right, .. } => 1 + walk(t, *left).max(walk(t, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(self, 0)
    }

    pub fn value_len(&self) -> usize {
        self.nodes
            .iter()
            .find_map(|n| match n {
                Node::Leaf { value } => Some(value.len()),
                _ => None,
            })
            .unwrap_or(0)
    }

    /// Flat f32 encoding: `[node_count, value_len]` then per node
    /// `[is_leaf, feature, threshold, left, right, value...]`.
    pub fn encode(&self) -> Vec<f32> {
        let vlen = self.value_len();
        let mut out = Vec::with_capacity(2 + self.nodes.len() * (5 + vlen));
        out.push(self.nodes.len() as f32);
        out.push(vlen as f32);
        for n in &self.nodes {
            match n {
                Node::Split { feature, threshold, left, right } => {
                    out.extend_from_slice(&[0.0, *feature as f32, *threshold as f32, *left as f32, *right as f32]);
                    out.extend(std::iter::repeat_n(0.0, vlen));
                }
                Node::Leaf { value } => {
                    out.extend_from_slice(&[1.0, 0.0, 0.0, 0.0, 0.0]);
                    out.extend(value.iter().map(|&v| v as f32));
                }
            }
        }
        out
    }

    /// Decode one tree from the front of `data`, returning the rest.
    pub fn decode(data: &[f32]) -> Result<(Tree, &[f32]), ClassifierError> {
        let bad = || ClassifierError::Encoding("truncated tree".into());
        if data.len() < 2 {
            return Err(bad());
        }
        let count = data[0] as usize;
        let vlen = data[1] as usize;
        let stride = 5 + vlen;
        let body = data.get(2..2 + count * stride).ok_or_else(bad)?;
        let mut nodes = Vec::with_capacity(count);
        for rec in body.chunks_exact(stride) {
            if rec[0] == 0.0 {
                let (left, right) = (rec[3] as usize, rec[4] as usize);
                if left >= count || right >= count {
                    return Err(ClassifierError::Encoding("child index out of range".into()));
                }
                nodes.push(Node::Split { feature: rec[1] as usize, threshold: f64::from(rec[2]), left, right });
            } else {
                nodes.push(Node::Leaf { value: rec[5..].iter().map(|&v| f64::from(v)).collect() });
            }
        }
        if nodes.is_empty() {
            return Err(bad());
        }
        Ok((Tree { nodes }, &data[2 + count * stride..]))
    }
}

/// Per-feature sample order by `(value, index)`, computed once per fit.
pub(crate) struct SortedColumns {
    order: Vec<Vec<u32>>,
}

impl SortedColumns {
    pub(crate) fn new(x: &Matrix) -> Self {
        let order = (0..x.cols)
            .map(|f| {
                let mut idx: Vec<u32> = (0..x.rows as u32).collect();
                idx.sort_by(|&a, &b| x.get(a as usize, f).total_cmp(&x.get(b as usize, f)).then(a.cmp(&b)));
                idx
            })
            .collect();
        Self { order }
    }
}

pub(crate) enum Target<'a> {
    Classes { y: &'a [usize], classes: usize },
    Values(&'a [f64]),
}

pub(crate) struct GrowParams {
    pub max_depth: Option<usize>,
    /// Features examined per split; `None` means all.
    pub max_features: Option<usize>,
}

struct Grower<'a> {
    x: &'a Matrix,
    cols: &'a SortedColumns,
    target: Target<'a>,
    weights: &'a [f64],
    params: &'a GrowParams,
    rng: Option<&'a mut ChaCha8Rng>,
    nodes: Vec<Node>,
    in_node: Vec<bool>,
}

/// Grow a tree on the samples with positive weight.
pub(crate) fn grow(
    x: &Matrix,
    cols: &SortedColumns,
    target: Target<'_>,
    weights: &[f64],
    params: &GrowParams,
    rng: Option<&mut ChaCha8Rng>,
) -> Tree {
    let samples: Vec<u32> = (0..x.rows as u32).filter(|&i| weights[i as usize] > 0.0).collect();
    let mut g = Grower { x, cols, target, weights, params, rng, nodes: Vec::new(), in_node: vec![false; x.rows] };
    g.build(&samples, 0);
    Tree { nodes: g.nodes }
}

struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Grower<'_> {
    fn stat_len(&self) -> usize {
        match self.target {
            Target::Classes { classes, .. } => classes,
            Target::Values(_) => 2,
        }
    }

    /// Classes: weighted counts. Values: `[Σw, Σw·y]`.
    fn add(&self, stats: &mut [f64], i: usize, sign: f64) {
        let w = self.weights[i] * sign;
        match self.target {
            Target::Classes { y, .. } => stats[y[i]] += w,
            Target::Values(v) => {
                stats[0] += w;
                stats[1] += w * v[i];
            }
        }
    }

    /// Larger is purer; a split's gain is children minus parent.
    fn score(&self, stats: &[f64]) -> f64 {
        match self.target {
            Target::Classes { .. } => {
                let total: f64 = stats.iter().sum();
                if total <= 0.0 {
                    0.0
                } else {
                    stats.iter().map(|c| c * c).sum::<f64>() / total
                }
            }
            Target::Values(_) => {
                if stats[0] <= 0.0 {
                    0.0
                } else {
                    stats[1] * stats[1] / stats[0]
                }
            }
        }
    }

    fn leaf(&self, stats: &[f64]) -> Node {
        match self.target {
            Target::Classes { .. } => Node::Leaf { value: stats.to_vec() },
            Target::Values(_) => Node::Leaf { value: vec![stats[1] / stats[0]] },
        }
    }

    fn build(&mut self, samples: &[u32], depth: usize) -> usize {
        let mut stats = vec![0.0; self.stat_len()];
        for &i in samples {
            self.add(&mut stats, i as usize, 1.0);
        }
        let id = self.nodes.len();
        self.nodes.push(self.leaf(&stats));

        let pure = matches!(self.target, Target::Classes { .. }) && stats.iter().filter(|&&c| c > 0.0).count() <= 1;
        let depth_capped = self.params.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_capped || samples.len() < 2 {
            return id;
        }
        let Some(best) = self.best_split(samples, &stats) else {
            return id;
        };
        let (left, right): (Vec<u32>, Vec<u32>) =
            samples.iter().partition(|&&i| self.x.get(i as usize, best.feature) <= best.threshold);
        let l = self.build(&left, depth + 1);
        let r = self.build(&right, depth + 1);
        self.nodes[id] = Node::Split { feature: best.feature, threshold: best.threshold, left: l, right: r };
        id
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let d = self.x.cols;
        match (self.params.max_features, self.rng.as_deref_mut()) {
            (Some(m), Some(rng)) if m < d => {
                let mut f = index::sample(rng, d, m).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..d).collect(),
        }
    }

    fn sorted_in_node(&mut self, samples: &[u32], feature: usize) -> Vec<u32> {
        let n = self.x.rows;
        if samples.len() * 16 < n {
            let mut local = samples.to_vec();
            local.sort_by(|&a, &b| {
                self.x.get(a as usize, feature).total_cmp(&self.x.get(b as usize, feature)).then(a.cmp(&b))
            });
            local
        } else {
            for &i in samples {
                self.in_node[i as usize] = true;
            }
            let out = self.cols.order[feature].iter().copied().filter(|&i| self.in_node[i as usize]).collect();
            for &i in samples {
                self.in_node[i as usize] = false;
            }
            out
        }
    }

    fn best_split(&mut self, samples: &[u32], parent: &[f64]) -> Option<Best> {
        let parent_score = self.score(parent);
        let tol = 1e-12 * parent_score.abs().max(1.0);
        let mut best: Option<Best> = None;
        let mut left = vec![0.0; parent.len()];
        let mut right = vec![0.0; parent.len()];
        for f in self.candidate_features() {
            let sorted = self.sorted_in_node(samples, f);
            left.iter_mut().for_each(|v| *v = 0.0);
            right.copy_from_slice(parent);
            for j in 0..sorted.len() - 1 {
                let i = sorted[j] as usize;
                self.add(&mut left, i, 1.0);
                self.add(&mut right, i, -1.0);
                let a = self.x.get(i, f);
                let b = self.x.get(sorted[j + 1] as usize, f);
                if a >= b {
                    continue;
                }
                let gain = self.score(&left) + self.score(&right) - parent_score;
                if gain > tol && best.as_ref().is_none_or(|bst| gain > bst.gain) {
                    best = Some(Best { gain, feature: f, threshold: split_threshold(a, b) });
                }
            }
        }
        best
    }
}

/// A threshold `t` with `a <= t < b`, preferring the midpoint, that is
/// exactly representable as f32 whenever `a` is.
fn split_threshold(a: f64, b: f64) -> f64 {
    let ok = |t: f64| a <= t && t < b;
    let mid = f64::from((a + (b - a) / 2.0) as f32);
    if ok(mid) {
        return mid;
    }
    let af = f64::from(a as f32);
    if ok(af) {
        return af;
    }
    let up = f64::from((a as f32).next_up());
    if ok(up) {
        return up;
    }
    a
}
