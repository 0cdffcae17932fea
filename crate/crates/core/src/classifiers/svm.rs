//! One-vs-rest linear SVM trained by full-batch subgradient descent.
//!
//! Per class `c` with targets `t_i = ±1` the objective is
//! `‖w‖² / (2 C n) + (1/n) Σ max(0, 1 - t_i (w·x_i + b))`, the mean-hinge
//! form of `½‖w‖² + C Σ hinge`. Step size decays as `rate / √t`; the iterate
//! with the lowest objective is kept.

use serde::{Deserialize, Serialize};

use super::logistic::LinearParams;
use super::matrix::{dot, Matrix};
use super::{softmax, ClassifierError, GRAD_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    pub epochs: usize,
    #[serde(default = "default_rate")]
    pub rate: f64,
}

fn default_rate() -> f64 {
    0.1
}

impl Default for SvmParams {
    fn default() -> Self {
        Self { c: 1.0, epochs: 500, rate: default_rate() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub params: LinearParams,
}

impl SvmModel {
    pub fn fit(hp: &SvmParams, x: &Matrix, y: &[usize], classes: usize) -> Result<Self, ClassifierError> {
        if !(hp.c > 0.0) || !(hp.rate > 0.0) || hp.epochs == 0 {
            return Err(ClassifierError::Hyperparams(format!("{hp:?}")));
        }
        let n = x.rows as f64;
        let lambda = 1.0 / (hp.c * n);
        let mut params = LinearParams::zeros(classes, x.cols);
        for c in 0..classes {
            let targets: Vec<f64> = y.iter().map(|&yi| if yi == c { 1.0 } else { -1.0 }).collect();
            let (w, b) = train_binary(x, &targets, lambda, hp);
            params.weights[c * x.cols..(c + 1) * x.cols].copy_from_slice(&w);
            params.bias[c] = b;
        }
        params.round_to_f32();
        Ok(Self { params })
    }

    pub fn margins(&self, x: &[f64]) -> Vec<f64> {
        self.params.scores(x)
    }

    /// Softmax over the per-class margins.
    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.margins(x))
    }
}

fn objective(x: &Matrix, t: &[f64], w: &[f64], b: f64, lambda: f64) -> f64 {
    let hinge: f64 = (0..x.rows).map(|i| (1.0 - t[i] * (dot(w, x.row(i)) + b)).max(0.0)).sum();
    0.5 * lambda * dot(w, w) + hinge / x.rows as f64
}

fn train_binary(x: &Matrix, t: &[f64], lambda: f64, hp: &SvmParams) -> (Vec<f64>, f64) {
    let n = x.rows as f64;
    let mut w = vec![0.0; x.cols];
    let mut b = 0.0;
    let mut best = (objective(x, t, &w, b, lambda), w.clone(), b);
    for epoch in 1..=hp.epochs {
        let mut gw: Vec<f64> = w.iter().map(|wj| lambda * wj).collect();
        let mut gb = 0.0;
        for i in 0..x.rows {
            let row = x.row(i);
            if t[i] * (dot(&w, row) + b) < 1.0 {
                for (g, xj) in gw.iter_mut().zip(row) {
                    *g -= t[i] * xj / n;
                }
                gb -= t[i] / n;
            }
        }
        let gnorm = (dot(&gw, &gw) + gb * gb).sqrt();
        if gnorm < GRAD_TOL {
            break;
        }
        let step = hp.rate / (epoch as f64).sqrt();
        for (wj, g) in w.iter_mut().zip(&gw) {
            *wj -= step * g;
        }
        b -= step * gb;
        let obj = objective(x, t, &w, b, lambda);
        if obj < best.0 {
            best = (obj, w.clone(), b);
        }
    }
    (best.1, best.2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::argmax;

    #[test]
    fn separates_three_blobs() {
        let x = Matrix::from_rows(&[
            vec![2.0, 0.0],
            vec![2.2, 0.3],
            vec![-1.0, 1.8],
            vec![-1.2, 2.1],
            vec![-1.0, -2.0],
            vec![-0.8, -2.2],
        ]);
        let y = [0, 0, 1, 1, 2, 2];
        let m = SvmModel::fit(&SvmParams { c: 10.0, epochs: 300, rate: 0.5 }, &x, &y, 3).unwrap();
        for i in 0..6 {
            assert_eq!(argmax(&m.margins(x.row(i))), y[i]);
        }
    }

    #[test]
    fn rejects_bad_c() {
        let x = Matrix::from_rows(&[vec![1.0], vec![-1.0]]);
        assert!(SvmModel::fit(&SvmParams { c: 0.0, ..Default::default() }, &x, &[0, 1], 2).is_err());
    }
}
