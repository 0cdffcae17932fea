//! Multinomial logistic regression, L2-penalized, full-batch gradient descent.
//!
//! Loss: `(1/n) Σ -log softmax(W x_i + b)[y_i] + l2 ‖W‖²`. The bias is not
//! penalized.

use serde::{Deserialize, Serialize};

use super::matrix::{dot, to_f32_exact, Matrix};
use super::{softmax, ClassifierError, GRAD_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrParams {
    pub l2: f64,
    pub rate: f64,
    pub epochs: usize,
}

impl Default for LrParams {
    fn default() -> Self {
        Self { l2: 1e-3, rate: 0.1, epochs: 500 }
    }
}

/// Per-class weight rows and biases of a linear scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub classes: usize,
    pub dim: usize,
    /// `classes × dim`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearParams {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        Self { classes, dim, weights: vec![0.0; classes * dim], bias: vec![0.0; classes] }
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.weights[c * self.dim..(c + 1) * self.dim]
    }

    pub fn scores(&self, x: &[f64]) -> Vec<f64> {
        (0..self.classes).map(|c| dot(self.row(c), x) + self.bias[c]).collect()
    }

    pub fn norm(&self) -> f64 {
        self.weights.iter().chain(&self.bias).map(|v| v * v).sum::<f64>().sqrt()
    }

    pub(crate) fn round_to_f32(&mut self) {
        self.weights.iter_mut().for_each(|w| *w = to_f32_exact(*w));
        self.bias.iter_mut().for_each(|w| *w = to_f32_exact(*w));
    }
}

/// Analytic gradient of the penalized cross-entropy at `params`.
pub fn lr_gradient(params: &LinearParams, x: &Matrix, y: &[usize], l2: f64) -> LinearParams {
    let mut grad = LinearParams::zeros(params.classes, params.dim);
    let n = x.rows as f64;
    for i in 0..x.rows {
        let row = x.row(i);
        let p = softmax(&params.scores(row));
        for c in 0..params.classes {
            let r = (p[c] - if y[i] == c { 1.0 } else { 0.0 }) / n;
            grad.bias[c] += r;
            let g = &mut grad.weights[c * params.dim..(c + 1) * params.dim];
            for (gj, xj) in g.iter_mut().zip(row) {
                *gj += r * xj;
            }
        }
    }
    for (g, w) in grad.weights.iter_mut().zip(&params.weights) {
        *g += 2.0 * l2 * w;
    }
    grad
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub params: LinearParams,
}

impl LogisticModel {
    pub fn fit(hp: &LrParams, x: &Matrix, y: &[usize], classes: usize) -> Result<Self, ClassifierError> {
        if !(hp.l2 >= 0.0) || !(hp.rate > 0.0) || hp.epochs == 0 {
            return Err(ClassifierError::Hyperparams(format!("{hp:?}")));
        }
        let mut params = LinearParams::zeros(classes, x.cols);
        for _ in 0..hp.epochs {
            let grad = lr_gradient(&params, x, y, hp.l2);
            if grad.norm() < GRAD_TOL {
                break;
            }
            for (w, g) in params.weights.iter_mut().zip(&grad.weights) {
                *w -= hp.rate * g;
            }
            for (b, g) in params.bias.iter_mut().zip(&grad.bias) {
                *b -= hp.rate * g;
            }
        }
        params.round_to_f32();
        Ok(Self { params })
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.params.scores(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Loss written out independently of the gradient code.
    fn loss(p: &LinearParams, x: &Matrix, y: &[usize], l2: f64) -> f64 {
        let mut total = 0.0;
        for i in 0..x.rows {
            let z: Vec<f64> = (0..p.classes)
                .map(|c| (0..p.dim).map(|j| p.weights[c * p.dim + j] * x.get(i, j)).sum::<f64>() + p.bias[c])
                .collect();
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - z[y[i]];
        }
        total / x.rows as f64 + l2 * p.weights.iter().map(|w| w * w).sum::<f64>()
    }

    fn toy() -> (Matrix, Vec<usize>) {
        let x = Matrix::from_rows(&[
            vec![1.0, 0.5],
            vec![0.8, -0.2],
            vec![-1.0, 0.3],
            vec![-0.7, -0.9],
        ]);
        (x, vec![0, 0, 1, 1])
    }

    #[test]
    fn gradient_matches_finite_differences_at_zero() {
        let (x, y) = toy();
        let p = LinearParams::zeros(2, 2);
        let g = lr_gradient(&p, &x, &y, 0.01);
        let h = 1e-5;
        for k in 0..p.weights.len() {
            let mut plus = p.clone();
            let mut minus = p.clone();
            plus.weights[k] += h;
            minus.weights[k] -= h;
            let fd = (loss(&plus, &x, &y, 0.01) - loss(&minus, &x, &y, 0.01)) / (2.0 * h);
            assert!((fd - g.weights[k]).abs() <= 1e-4 * fd.abs().max(1e-8), "{fd} vs {}", g.weights[k]);
        }
    }

    #[test]
    fn stationary_at_symmetric_optimum() {
        // identical inputs with opposite labels: the optimum is all zeros
        let x = Matrix::from_rows(&[vec![1.0], vec![1.0], vec![-1.0], vec![-1.0]]);
        let y = [0, 1, 0, 1];
        let g = lr_gradient(&LinearParams::zeros(2, 1), &x, &y, 0.0);
        assert!(g.norm() < 1e-6);
    }

    #[test]
    fn penalty_gradient_is_two_l2_w() {
        let x = Matrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]]);
        let mut p = LinearParams::zeros(2, 2);
        p.weights = vec![0.5, -1.0, 2.0, 0.25];
        // zero inputs: data term contributes nothing to the weight gradient
        let g = lr_gradient(&p, &x, &[0, 1], 0.3);
        for (gw, w) in g.weights.iter().zip(&p.weights) {
            assert!((gw - 2.0 * 0.3 * w).abs() < 1e-12);
        }
    }
}
