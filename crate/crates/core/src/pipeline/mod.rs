//! Enrollment: splitting, cross-validation, hyperparameter search, threshold
//! tuning, training, evaluation and the model container.

mod container;
mod report;
mod train;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifiers::{
    fit_indexed, BoostParams, ClassifierKind, ClassifierModel, ForestParams, Hyperparams, KnnParams, LrParams,
    Matrix, SvmParams, TreeParams,
};
use crate::imgen::{self, Phenotype, PIXELS};
use crate::{seed, Error, Result};

pub use container::{decode_model, encode_model, read_model, write_model, CONTAINER_MAGIC};
pub use report::{centroid_oracle, evaluate, macro_f1, threshold_rates, EvalReport};
pub use train::{partition, train_dpan, Partition, Provenance, Seeds, TrainOptions, TrainedAuthenticator, TuningSummary};

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_TEST_FRACTION: f64 = 0.2;
pub const DEFAULT_ADVERSARIES: usize = 100;
pub const DEFAULT_SEARCH_BUDGET: usize = 8;
pub const THRESHOLD_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Fold membership of the training set, as sample indices.
    pub folds: Vec<Vec<usize>>,
}

/// Class indices of `labels` against the sorted distinct label set.
pub fn class_indices(labels: &[String]) -> (Vec<String>, Vec<usize>) {
    crate::classifiers::encode_labels(labels)
}

fn by_class(y: &[usize]) -> Vec<Vec<usize>> {
    let classes = y.iter().max().map_or(0, |m| m + 1);
    let mut groups = vec![Vec::new(); classes];
    for (i, &c) in y.iter().enumerate() {
        groups[c].push(i);
    }
    groups
}

/// Largest-remainder allocation of `total` across groups proportional to
/// `sizes`; ties go to the earlier group.
fn allocate(sizes: &[usize], total: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    let mut out: Vec<usize> = sizes.iter().map(|&s| s * total / n).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse((sizes[i] * total) % n));
    let assigned: usize = out.iter().sum();
    for &i in order.iter().take(total - assigned) {
        out[i] += 1;
    }
    out
}

/// Stratified train/test partition of class-indexed samples, with stratified
/// folds over the training part.
pub fn split(y: &[usize], test_fraction: f64, seed: u64) -> Result<DatasetSplit> {
    split_with_folds(y, test_fraction, DEFAULT_FOLDS, seed)
}

pub fn split_with_folds(y: &[usize], test_fraction: f64, k: usize, seed: u64) -> Result<DatasetSplit> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Pipeline(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    let groups = by_class(y);
    if let Some((c, g)) = groups.iter().enumerate().find(|(_, g)| g.len() < 2) {
        return Err(Error::Pipeline(format!("class {c} has {} samples, need at least 2", g.len())));
    }
    let total = ((y.len() as f64) * test_fraction).round() as usize;
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let quotas = allocate(&sizes, total);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, mut members) in groups.into_iter().enumerate() {
        members.shuffle(&mut seed::rng(seed, &[0x5B, c as u64]));
        let n_test = quotas[c].clamp(1, members.len() - 1);
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    let train_y: Vec<usize> = train.iter().map(|&i| y[i]).collect();
    let folds = stratified_folds(&train_y, k, seed::derive(seed, &[0xF0]))?
        .into_iter()
        .map(|f| f.into_iter().map(|j| train[j]).collect())
        .collect();
    Ok(DatasetSplit { train, test, folds })
}

/// `k` disjoint stratified folds covering every position of `y`.
///
/// Each class is shuffled and dealt round-robin; the dealing position carries
/// over between classes so fold sizes differ by at most one.
pub fn stratified_folds(y: &[usize], k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let groups = by_class(y);
    let smallest = groups.iter().map(Vec::len).filter(|&n| n > 0).min().unwrap_or(0);
    if k < 2 || k > smallest {
        return Err(Error::Pipeline(format!("{k} folds with smallest class of {smallest}")));
    }
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for (c, mut members) in groups.into_iter().enumerate() {
        members.shuffle(&mut seed::rng(seed, &[0xF1, c as u64]));
        for i in members {
            folds[next % k].push(i);
            next += 1;
        }
    }
    for f in folds.iter_mut() {
        f.sort_unstable();
    }
    Ok(folds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvScore {
    pub mean: f64,
    /// Population standard deviation over folds.
    pub std: f64,
}

impl CvScore {
    pub fn from_accuracies(acc: &[f64]) -> Self {
        let n = acc.len() as f64;
        let mean = acc.iter().sum::<f64>() / n;
        let var = acc.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

/// Accuracy on each held-out fold after fitting on the others.
pub fn fold_accuracies(
    hp: &Hyperparams,
    x: &Matrix,
    y: &[usize],
    labels: &[String],
    folds: &[Vec<usize>],
    seed: u64,
) -> Result<Vec<f64>> {
    folds
        .par_iter()
        .enumerate()
        .map(|(f, held)| {
            let mut is_held = vec![false; y.len()];
            held.iter().for_each(|&i| is_held[i] = true);
            let fit_idx: Vec<usize> = (0..y.len()).filter(|&i| !is_held[i]).collect();
            let fit_y: Vec<usize> = fit_idx.iter().map(|&i| y[i]).collect();
            let model = fit_indexed(hp, &x.select(&fit_idx), &fit_y, labels.to_vec(), seed::derive(seed, &[f as u64]))?;
            let mut correct = 0;
            for &i in held {
                if model.predict(x.row(i))?.index == y[i] {
                    correct += 1;
                }
            }
            Ok(correct as f64 / held.len() as f64)
        })
        .collect()
}

pub fn cross_validate(
    hp: &Hyperparams,
    x: &Matrix,
    y: &[usize],
    labels: &[String],
    k: usize,
    seed: u64,
) -> Result<CvScore> {
    let folds = stratified_folds(y, k, seed)?;
    let acc = fold_accuracies(hp, x, y, labels, &folds, seed)?;
    Ok(CvScore::from_accuracies(&acc))
}

pub fn default_grid(kind: ClassifierKind) -> Vec<Hyperparams> {
    let mut grid = Vec::new();
    match kind {
        ClassifierKind::Lr => {
            for l2 in [1e-4, 1e-3, 1e-2, 1e-1] {
                for rate in [0.01, 0.1] {
                    for epochs in [200, 500] {
                        grid.push(Hyperparams::Lr(LrParams { l2, rate, epochs }));
                    }
                }
            }
        }
        ClassifierKind::Svm => {
            for c in [0.1, 1.0, 10.0] {
                for epochs in [200, 500] {
                    grid.push(Hyperparams::Svm(SvmParams { c, epochs, ..SvmParams::default() }));
                }
            }
        }
        ClassifierKind::Knn => grid.extend([1, 3, 5, 7, 9].map(|k| Hyperparams::Knn(KnnParams { k }))),
        ClassifierKind::Dt => {
            grid.extend([Some(4), Some(8), Some(16), None].map(|max_depth| Hyperparams::Dt(TreeParams { max_depth })))
        }
        ClassifierKind::Rf => {
            for trees in [50, 100, 200] {
                for max_depth in [Some(8), Some(16), None] {
                    grid.push(Hyperparams::Rf(ForestParams { trees, max_depth, ..ForestParams::default() }));
                }
            }
        }
        ClassifierKind::Gbt => {
            for rounds in [50, 100] {
                for rate in [0.05, 0.1] {
                    for max_depth in [2, 3] {
                        grid.push(Hyperparams::Gbt(BoostParams { rounds, rate, max_depth }));
                    }
                }
            }
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub hyperparams: Hyperparams,
    pub cv: CvScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: Hyperparams,
    pub best_cv: CvScore,
    /// Every sampled point in sampling order.
    pub trials: Vec<Trial>,
}

/// Samples `budget` distinct grid points and keeps the best CV mean accuracy;
/// ties keep the earlier sample.
pub fn random_search(
    grid: &[Hyperparams],
    budget: usize,
    x: &Matrix,
    y: &[usize],
    labels: &[String],
    k: usize,
    seed: u64,
) -> Result<SearchResult> {
    if grid.is_empty() || budget == 0 || budget > grid.len() {
        return Err(Error::Pipeline(format!("search budget {budget} over a grid of {}", grid.len())));
    }
    let picks = rand::seq::index::sample(&mut seed::rng(seed, &[0x5E]), grid.len(), budget).into_vec();
    let folds = stratified_folds(y, k, seed::derive(seed, &[0xF0]))?;
    let mut trials = Vec::with_capacity(budget);
    for p in picks {
        let hp = grid[p].clone();
        let acc = fold_accuracies(&hp, x, y, labels, &folds, seed::derive(seed, &[0xCF]))?;
        log::debug!("search {:?}: {:?}", hp, acc);
        trials.push(Trial { hyperparams: hp, cv: CvScore::from_accuracies(&acc) });
    }
    let mut best = 0;
    for (i, t) in trials.iter().enumerate() {
        if t.cv.mean > trials[best].cv.mean {
            best = i;
        }
    }
    Ok(SearchResult { best: trials[best].hyperparams.clone(), best_cv: trials[best].cv, trials })
}

/// Uniform-random phenotypes standing in for a response-guessing attacker.
pub fn gen_adversary(count: usize, seed: u64) -> Vec<Phenotype> {
    (0..count)
        .map(|i| {
            let mut rng = seed::rng(seed, &[0xAD, i as u64]);
            let mut bytes = vec![0u8; PIXELS];
            rng.fill(bytes.as_mut_slice());
            imgen::imgen(&bytes).expect("exact pixel count")
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub value: f64,
    pub max_adversary_confidence: f64,
    /// Share of correctly classified legit samples whose confidence falls
    /// below the threshold.
    pub fn_rate: f64,
    pub clamped: bool,
}

/// Smallest threshold rejecting every adversary and every misclassified
/// legit sample of the tuning sets.
pub fn tune_threshold(
    model: &ClassifierModel,
    legit_x: &Matrix,
    legit_y: &[usize],
    adversary_x: &Matrix,
) -> Result<Threshold> {
    if !model.kind().has_confidence() {
        return Err(Error::Pipeline(format!("{} models produce no confidence", model.kind())));
    }
    if legit_x.rows == 0 || adversary_x.rows == 0 {
        return Err(Error::Pipeline("threshold tuning needs legit and adversary samples".into()));
    }
    let confidence = |row: &[f64]| -> Result<(usize, f64)> {
        let p = model.predict(row)?;
        Ok((p.index, p.confidence.unwrap_or(0.0)))
    };
    let mut max_adv: f64 = 0.0;
    for i in 0..adversary_x.rows {
        max_adv = max_adv.max(confidence(adversary_x.row(i))?.1);
    }
    let mut bound = max_adv;
    let mut correct = Vec::new();
    for (i, &y) in legit_y.iter().enumerate() {
        let (pred, conf) = confidence(legit_x.row(i))?;
        if pred == y {
            correct.push(conf);
        } else {
            bound = bound.max(conf);
        }
    }
    let mut value = bound + THRESHOLD_EPSILON;
    let clamped = value > 1.0;
    if clamped {
        log::warn!("a tuning sample reached confidence {bound}; zero false positives now requires certainty");
        value = 1.0;
    }
    let fn_rate = fn_rate(&correct, value);
    Ok(Threshold { value, max_adversary_confidence: max_adv, fn_rate, clamped })
}

fn fn_rate(correct_confidences: &[f64], threshold: f64) -> f64 {
    if correct_confidences.is_empty() {
        return 0.0;
    }
    correct_confidences.iter().filter(|&&c| c < threshold).count() as f64 / correct_confidences.len() as f64
}
