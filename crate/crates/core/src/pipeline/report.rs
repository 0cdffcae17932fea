use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::TrainedAuthenticator;
use crate::classifiers::argmax;
use crate::imgen::Phenotype;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classifier: String,
    pub labels: Vec<String>,
    pub test_samples: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<usize>>,
    pub cv_mean: f64,
    pub cv_std: f64,
    pub threshold: Option<f64>,
    pub mean_correct_confidence: Option<f64>,
    pub mean_incorrect_confidence: Option<f64>,
    pub adversaries: usize,
    pub max_adversary_confidence: Option<f64>,
    /// Correctly classified legit samples rejected by the threshold.
    pub fn_rate: Option<f64>,
    /// Adversary images reaching the threshold.
    pub fp_rate: Option<f64>,
}

/// Unweighted mean of per-class F1; a class with no true or predicted samples
/// scores 0.
pub fn macro_f1(cm: &[Vec<usize>]) -> f64 {
    let k = cm.len();
    let mut total = 0.0;
    for c in 0..k {
        let tp = cm[c][c] as f64;
        let actual: usize = cm[c].iter().sum();
        let predicted: usize = cm.iter().map(|r| r[c]).sum();
        let denom = (actual + predicted) as f64;
        total += if denom > 0.0 { 2.0 * tp / denom } else { 0.0 };
    }
    total / k as f64
}

fn accuracy(cm: &[Vec<usize>]) -> f64 {
    let trace: usize = (0..cm.len()).map(|i| cm[i][i]).sum();
    let total: usize = cm.iter().flatten().sum();
    trace as f64 / total as f64
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// False-negative rate over correctly classified legit confidences and
/// false-positive rate over adversary confidences at threshold `t`. Empty
/// inputs give a rate of 0.
pub fn threshold_rates(correct: &[f64], adversary: &[f64], t: f64) -> (f64, f64) {
    let rate = |v: &[f64], hit: &dyn Fn(f64) -> bool| {
        if v.is_empty() { 0.0 } else { v.iter().filter(|&&c| hit(c)).count() as f64 / v.len() as f64 }
    };
    (rate(correct, &|c| c < t), rate(adversary, &|c| c >= t))
}

pub fn evaluate(
    model: &TrainedAuthenticator,
    test: &[&Phenotype],
    test_y: &[usize],
    adversaries: &[&Phenotype],
) -> Result<EvalReport> {
    if test.is_empty() || test.len() != test_y.len() {
        return Err(Error::Pipeline(format!("{} test images with {} labels", test.len(), test_y.len())));
    }
    let k = model.labels().len();
    let x = model.features(test)?;
    let mut cm = vec![vec![0usize; k]; k];
    let mut correct = Vec::new();
    let mut incorrect = Vec::new();
    for (i, &y) in test_y.iter().enumerate() {
        let p = model.classifier.predict(x.row(i))?;
        cm[y][p.index] += 1;
        if let Some(c) = p.confidence {
            if p.index == y { correct.push(c) } else { incorrect.push(c) }
        }
    }
    let adv_conf: Vec<f64> = if adversaries.is_empty() || !model.kind().has_confidence() {
        Vec::new()
    } else {
        let ax = model.features(adversaries)?;
        (0..ax.rows).map(|i| model.classifier.predict(ax.row(i)).map(|p| p.confidence.unwrap_or(0.0))).collect::<Result<_, _>>()?
    };
    let max_adv = adv_conf.iter().copied().reduce(f64::max);
    let (fn_rate, fp_rate) = match model.threshold {
        Some(t) => {
            let (fnr, fpr) = threshold_rates(&correct, &adv_conf, t);
            (Some(fnr), (!adv_conf.is_empty()).then_some(fpr))
        }
        None => (None, None),
    };
    Ok(EvalReport {
        classifier: model.kind().heading().to_string(),
        labels: model.labels().to_vec(),
        test_samples: test.len(),
        accuracy: accuracy(&cm),
        macro_f1: macro_f1(&cm),
        confusion: cm,
        cv_mean: model.tuning.cv.mean,
        cv_std: model.tuning.cv.std,
        threshold: model.threshold,
        mean_correct_confidence: if model.kind().has_confidence() { mean(&correct) } else { None },
        mean_incorrect_confidence: if model.kind().has_confidence() { mean(&incorrect) } else { None },
        adversaries: adversaries.len(),
        max_adversary_confidence: max_adv,
        fn_rate,
        fp_rate,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    /// Aligned text table, one row per report.
    pub fn table(reports: &[EvalReport]) -> String {
        let headings = [
            "Classifier",
            "Accuracy",
            "F1",
            "CV Mean",
            "CV Std",
            "Mean Correct Confidence",
            "Mean Incorrect Confidence",
            "Max Adversary Confidence",
            "FN-FP (%)",
        ];
        let na = || "n/a".to_string();
        let opt = |v: Option<f64>| v.map_or_else(na, |x| format!("{x:.3}"));
        let rows: Vec<Vec<String>> = reports
            .iter()
            .map(|r| {
                vec![
                    r.classifier.clone(),
                    format!("{:.3}", r.accuracy),
                    format!("{:.3}", r.macro_f1),
                    format!("{:.3}", r.cv_mean),
                    format!("{:.3}", r.cv_std),
                    opt(r.mean_correct_confidence),
                    opt(r.mean_incorrect_confidence),
                    opt(r.max_adversary_confidence),
                    match (r.fn_rate, r.fp_rate) {
                        (Some(f), Some(p)) => format!("{:.1}-{:.1}", f * 100.0, p * 100.0),
                        (Some(f), None) => format!("{:.1}-n/a", f * 100.0),
                        _ => na(),
                    },
                ]
            })
            .collect();
        let widths: Vec<usize> = (0..headings.len())
            .map(|c| rows.iter().map(|r| r[c].len()).chain([headings[c].len()]).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        let line = |cells: &[&str], out: &mut String| {
            let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            let _ = writeln!(out, "{}", padded.join("  ").trim_end());
        };
        line(&headings, &mut out);
        line(&widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().iter().map(String::as_str).collect::<Vec<_>>(), &mut out);
        for r in &rows {
            line(&r.iter().map(String::as_str).collect::<Vec<_>>(), &mut out);
        }
        out
    }
}

/// Nearest class mean in raw pixel space.
pub fn centroid_oracle(train: &[&Phenotype], train_y: &[usize], test: &[&Phenotype], test_y: &[usize]) -> Result<f64> {
    if train.is_empty() || test.is_empty() || train.len() != train_y.len() || test.len() != test_y.len() {
        return Err(Error::Pipeline("centroid oracle needs labelled train and test images".into()));
    }
    let k = train_y.iter().max().map_or(0, |m| m + 1);
    let dim = train[0].pixels.len();
    let mut sums = vec![vec![0.0f64; dim]; k];
    let mut counts = vec![0usize; k];
    for (img, &c) in train.iter().zip(train_y) {
        counts[c] += 1;
        for (s, &p) in sums[c].iter_mut().zip(&img.pixels) {
            *s += f64::from(p);
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        s.iter_mut().for_each(|v| *v /= n.max(1) as f64);
    }
    let mut hits = 0;
    for (img, &y) in test.iter().zip(test_y) {
        let neg_dist: Vec<f64> = sums
            .iter()
            .zip(&counts)
            .map(|(c, &n)| {
                if n == 0 {
                    return f64::NEG_INFINITY;
                }
                -c.iter().zip(&img.pixels).map(|(m, &p)| (m - f64::from(p)).powi(2)).sum::<f64>()
            })
            .collect();
        if argmax(&neg_dist) == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / test.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgen::imgen;

    #[test]
    fn perfect_confusion() {
        let cm = vec![vec![10, 0, 0], vec![0, 10, 0], vec![0, 0, 10]];
        assert_eq!(accuracy(&cm), 1.0);
        assert_eq!(macro_f1(&cm), 1.0);
    }

    #[test]
    fn two_class_confusion() {
        let cm = vec![vec![9, 1], vec![2, 8]];
        assert_eq!(accuracy(&cm), 0.85);
        // class 0: p 9/11, r 9/10 → 18/21; class 1: p 8/9, r 8/10 → 16/19
        let expect = (18.0 / 21.0 + 16.0 / 19.0) / 2.0;
        assert!((macro_f1(&cm) - expect).abs() < 1e-15);
        assert!((macro_f1(&cm) - 0.849624).abs() < 1e-6);
    }

    #[test]
    fn oracle_basics() {
        let a = imgen(&vec![0; 44_000]).unwrap();
        let b = imgen(&vec![200; 44_000]).unwrap();
        let near_b = imgen(&vec![180; 44_000]).unwrap();
        assert_eq!(centroid_oracle(&[&a, &b], &[0, 1], &[&b, &a, &near_b], &[1, 0, 1]).unwrap(), 1.0);
        assert!(centroid_oracle(&[], &[], &[&a], &[0]).is_err());
    }

    #[test]
    fn table_has_column_names() {
        let r = EvalReport {
            classifier: "DT".into(),
            labels: vec!["a".into()],
            test_samples: 1,
            accuracy: 1.0,
            macro_f1: 1.0,
            confusion: vec![vec![1]],
            cv_mean: 1.0,
            cv_std: 0.0,
            threshold: None,
            mean_correct_confidence: None,
            mean_incorrect_confidence: None,
            adversaries: 0,
            max_adversary_confidence: None,
            fn_rate: None,
            fp_rate: None,
        };
        let t = EvalReport::table(&[r]);
        for h in ["Mean Correct Confidence", "Mean Incorrect Confidence", "Max Adversary Confidence", "FN-FP (%)"] {
            assert!(t.contains(h));
        }
        assert!(t.lines().nth(2).unwrap().starts_with("DT"));
    }
}
