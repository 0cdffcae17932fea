use serde::{Deserialize, Serialize};

use super::matrix::{to_f32_exact, Matrix};
use super::ClassifierError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnParams {
    pub k: usize,
}

impl Default for KnnParams {
    fn default() -> Self {
        Self { k: 5 }
    }
}

/// Memorized training set; Euclidean distance, distance ties broken by
/// training order.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnModel {
    pub k: usize,
    pub points: Matrix,
    pub targets: Vec<usize>,
    pub classes: usize,
}

impl KnnModel {
    pub fn fit(hp: &KnnParams, x: &Matrix, y: &[usize], classes: usize) -> Result<Self, ClassifierError> {
        if hp.k == 0 || hp.k > x.rows {
            return Err(ClassifierError::Hyperparams(format!("k = {} with {} samples", hp.k, x.rows)));
        }
        let mut points = x.clone();
        points.data.iter_mut().for_each(|v| *v = to_f32_exact(*v));
        Ok(Self { k: hp.k, points, targets: y.to_vec(), classes })
    }

    /// Vote counts of the `k` nearest training points.
    pub fn votes(&self, x: &[f64]) -> Vec<usize> {
        let mut dist: Vec<(f64, usize)> = (0..self.points.rows)
            .map(|i| {
                let d: f64 = self.points.row(i).iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                (d, i)
            })
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut votes = vec![0; self.classes];
        for &(_, i) in dist.iter().take(self.k) {
            votes[self.targets[i]] += 1;
        }
        votes
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        self.votes(x).into_iter().map(|v| v as f64 / self.k as f64).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vote_fraction() {
        let x = Matrix::from_rows(&[vec![0.0], vec![0.1], vec![0.2], vec![0.3], vec![0.35], vec![5.0]]);
        let y = [0, 0, 0, 0, 1, 1];
        let m = KnnModel::fit(&KnnParams { k: 5 }, &x, &y, 2).unwrap();
        assert_eq!(m.votes(&[0.15]), vec![4, 1]);
        assert_eq!(m.probabilities(&[0.15]), vec![0.8, 0.2]);
        assert!(KnnModel::fit(&KnnParams { k: 7 }, &x, &y, 2).is_err());
        assert!(KnnModel::fit(&KnnParams { k: 0 }, &x, &y, 2).is_err());
    }
}
