use serde::{Deserialize, Serialize};

use super::matrix::{to_f32_exact, Matrix};

/// Per-dimension z-scoring fitted on training data.
///
/// Zero-variance dimensions get a standard deviation of 1. Both vectors are
/// rounded to f32 at fit time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Self {
        let n = x.rows.max(1) as f64;
        let mut mean = vec![0.0; x.cols];
        for i in 0..x.rows {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; x.cols];
        for i in 0..x.rows {
            for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .iter()
            .map(|s| {
                let sd = to_f32_exact((s / n).sqrt());
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean: mean.into_iter().map(to_f32_exact).collect(), std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn transform(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for i in 0..x.rows {
            let t = self.transform_row(x.row(i));
            out.row_mut(i).copy_from_slice(&t);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transformed_training_data_is_centered() {
        let x = Matrix::from_rows(&[
            vec![1.0, 5.0, 2.0],
            vec![3.0, 5.0, -1.0],
            vec![8.0, 5.0, 0.5],
            vec![-2.0, 5.0, 7.0],
        ]);
        let s = Standardizer::fit(&x);
        assert_eq!(s.std[1], 1.0);
        assert!(s.std.iter().all(|&v| v > 0.0));
        let t = s.transform(&x);
        for j in 0..3 {
            let m: f64 = (0..4).map(|i| t.get(i, j)).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-6, "{m}");
        }
    }
}
