use serde::{Deserialize, Serialize};

use super::{
    class_indices, default_grid, fold_accuracies, gen_adversary, random_search, split, stratified_folds,
    tune_threshold, CvScore, Threshold, DEFAULT_ADVERSARIES, DEFAULT_FOLDS, DEFAULT_SEARCH_BUDGET,
    DEFAULT_TEST_FRACTION,
};
use crate::classifiers::{fit_indexed, ClassifierKind, ClassifierModel, Hyperparams, Matrix, Prediction, Standardizer};
use crate::dataset::LoadedDataset;
use crate::features::{extract_batch, init_weights, ExtractorConfig, WeightSet, WidthScale};
use crate::imgen::Phenotype;
use crate::{seed, Error, Result};

/// Independent seeds for each random stage of enrollment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub split: u64,
    pub weights: u64,
    pub search: u64,
    pub fit: u64,
    pub adversary: u64,
}

impl Seeds {
    pub fn from_master(master: u64) -> Self {
        let d = |tag: u64| seed::derive(master, &[0x7A, tag]);
        Self { split: d(1), weights: d(2), search: d(3), fit: d(4), adversary: d(5) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub test_fraction: f64,
    /// Share of the training split held back for threshold tuning.
    pub validation_fraction: f64,
    pub width_scale: WidthScale,
    /// External weights; seeded random filters when absent.
    pub weights_path: Option<std::path::PathBuf>,
    /// Fixed hyperparameters; overrides the search when present.
    pub hyperparams: Option<Hyperparams>,
    /// Random-search budget; `None` fits the kind's defaults without search.
    pub search_budget: Option<usize>,
    pub folds: usize,
    pub adversaries: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            test_fraction: DEFAULT_TEST_FRACTION,
            validation_fraction: 0.2,
            width_scale: WidthScale::Eighth,
            weights_path: None,
            hyperparams: None,
            search_budget: Some(DEFAULT_SEARCH_BUDGET),
            folds: DEFAULT_FOLDS,
            adversaries: DEFAULT_ADVERSARIES,
        }
    }
}

/// Everything needed to reproduce the model from the same dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seeds: Seeds,
    pub manifest_hash: String,
    pub test_fraction: f64,
    pub validation_fraction: f64,
    pub folds: usize,
    pub adversaries: usize,
    pub tool_version: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningSummary {
    pub cv: CvScore,
    pub validation_samples: usize,
    pub max_adversary_confidence: Option<f64>,
    pub fn_rate: Option<f64>,
}

/// Extractor, standardizer, classifier and acceptance threshold as one unit.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedAuthenticator {
    pub extractor: ExtractorConfig,
    pub weights: WeightSet,
    pub standardizer: Standardizer,
    pub classifier: ClassifierModel,
    /// Absent for decision trees, which cannot authenticate.
    pub threshold: Option<f64>,
    pub provenance: Provenance,
    pub tuning: TuningSummary,
}

impl TrainedAuthenticator {
    pub fn kind(&self) -> ClassifierKind {
        self.classifier.kind()
    }

    pub fn labels(&self) -> &[String] {
        &self.classifier.labels
    }

    /// Classifier inputs for raw extractor outputs.
    pub fn prepare(&self, raw: &[f64]) -> Vec<f64> {
        if self.kind().uses_standardization() {
            self.standardizer.transform_row(raw)
        } else {
            raw.to_vec()
        }
    }

    pub fn features(&self, images: &[&Phenotype]) -> Result<Matrix> {
        let raw = features_matrix(&self.weights, images)?;
        let mut out = raw.clone();
        for i in 0..raw.rows {
            out.row_mut(i).copy_from_slice(&self.prepare(raw.row(i)));
        }
        Ok(out)
    }

    pub fn predict(&self, image: &Phenotype) -> Result<Prediction> {
        let x = self.features(&[image])?;
        Ok(self.classifier.predict(x.row(0))?)
    }

    /// Re-derive the enrollment partition of `dataset`, with class indices.
    pub fn partition_of(&self, dataset: &LoadedDataset) -> Result<(Vec<usize>, Partition)> {
        let y = dataset_classes(dataset, self.labels())?;
        let p = partition(&y, self.provenance.test_fraction, self.provenance.validation_fraction, self.provenance.seeds.split)?;
        Ok((y, p))
    }

    /// Re-tune the threshold on the enrollment validation set against
    /// `count` fresh adversaries.
    pub fn retune(&mut self, dataset: &LoadedDataset, count: usize, adversary_seed: u64) -> Result<Threshold> {
        let (y, p) = self.partition_of(dataset)?;
        let val_images: Vec<&Phenotype> = p.validation.iter().map(|&i| &dataset.images[i].image).collect();
        let val_y: Vec<usize> = p.validation.iter().map(|&i| y[i]).collect();
        let adversaries = gen_adversary(count, adversary_seed);
        let t = tune_threshold(
            &self.classifier,
            &self.features(&val_images)?,
            &val_y,
            &self.features(&adversaries.iter().collect::<Vec<_>>())?,
        )?;
        self.threshold = Some(t.value);
        self.provenance.seeds.adversary = adversary_seed;
        self.provenance.adversaries = count;
        self.tuning.max_adversary_confidence = Some(t.max_adversary_confidence);
        self.tuning.fn_rate = Some(t.fn_rate);
        Ok(t)
    }
}

/// Sample indices of the three enrollment parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub fit: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified test split, then a stratified validation split of the rest.
pub fn partition(y: &[usize], test_fraction: f64, validation_fraction: f64, split_seed: u64) -> Result<Partition> {
    let outer = split(y, test_fraction, split_seed)?;
    let train_y: Vec<usize> = outer.train.iter().map(|&i| y[i]).collect();
    let inner = split(&train_y, validation_fraction, seed::derive(split_seed, &[0x7A]))?;
    Ok(Partition {
        fit: inner.train.iter().map(|&j| outer.train[j]).collect(),
        validation: inner.test.iter().map(|&j| outer.train[j]).collect(),
        test: outer.test,
    })
}

pub(crate) fn features_matrix(weights: &WeightSet, images: &[&Phenotype]) -> Result<Matrix> {
    let feats = extract_batch(weights, images)?;
    let rows: Vec<Vec<f64>> = feats.iter().map(|f| f.to_f64()).collect();
    Ok(Matrix::from_rows(&rows))
}

/// Class index of every image against `labels`.
pub(crate) fn dataset_classes(dataset: &LoadedDataset, labels: &[String]) -> Result<Vec<usize>> {
    dataset
        .images
        .iter()
        .map(|l| {
            labels
                .iter()
                .position(|x| *x == l.label)
                .ok_or_else(|| Error::Pipeline(format!("label {} unknown to the model", l.label)))
        })
        .collect()
}

pub fn train_dpan(
    dataset: &LoadedDataset,
    kind: ClassifierKind,
    opts: &TrainOptions,
    seeds: Seeds,
) -> Result<TrainedAuthenticator> {
    let names: Vec<String> = dataset.images.iter().map(|l| l.label.clone()).collect();
    let (labels, y) = class_indices(&names);
    if labels.len() < 2 {
        return Err(Error::Pipeline(format!("{} device label(s); need at least 2", labels.len())));
    }
    let parts = partition(&y, opts.test_fraction, opts.validation_fraction, seeds.split)?;
    log::info!("split: {} fit, {} validation, {} test", parts.fit.len(), parts.validation.len(), parts.test.len());

    let extractor = match &opts.weights_path {
        Some(path) => ExtractorConfig {
            width_scale: opts.width_scale,
            weight_source: crate::features::WeightSource::Imported { path: path.clone() },
        },
        None => ExtractorConfig::seeded(opts.width_scale, seeds.weights),
    };
    let weights = init_weights(&extractor)?;
    let images = |idx: &[usize]| idx.iter().map(|&i| &dataset.images[i].image).collect::<Vec<_>>();
    let fit_raw = features_matrix(&weights, &images(&parts.fit))?;
    let val_raw = features_matrix(&weights, &images(&parts.validation))?;
    let fit_y: Vec<usize> = parts.fit.iter().map(|&i| y[i]).collect();
    let val_y: Vec<usize> = parts.validation.iter().map(|&i| y[i]).collect();

    let standardizer = Standardizer::fit(&fit_raw);
    let prep = |m: &Matrix| if kind.uses_standardization() { standardizer.transform(m) } else { m.clone() };
    let fit_x = prep(&fit_raw);
    let val_x = prep(&val_raw);

    let (hyperparams, cv) = match (&opts.hyperparams, opts.search_budget) {
        (Some(hp), _) => {
            if hp.kind() != kind {
                return Err(Error::Pipeline(format!("hyperparameters for {} given to {kind}", hp.kind())));
            }
            (hp.clone(), cv_score(hp, &fit_x, &fit_y, &labels, opts.folds, seeds.search)?)
        }
        (None, Some(budget)) => {
            let grid = default_grid(kind);
            let found = random_search(&grid, budget.min(grid.len()), &fit_x, &fit_y, &labels, opts.folds, seeds.search)?;
            log::info!("search picked {:?} (cv {:.4})", found.best, found.best_cv.mean);
            (found.best, found.best_cv)
        }
        (None, None) => {
            let hp = Hyperparams::default_for(kind);
            let cv = cv_score(&hp, &fit_x, &fit_y, &labels, opts.folds, seeds.search)?;
            (hp, cv)
        }
    };
    let classifier = fit_indexed(&hyperparams, &fit_x, &fit_y, labels, seeds.fit)?;

    let tuned: Option<Threshold> = if kind.has_confidence() {
        let adversaries = gen_adversary(opts.adversaries, seeds.adversary);
        let adv_x = prep(&features_matrix(&weights, &adversaries.iter().collect::<Vec<_>>())?);
        Some(tune_threshold(&classifier, &val_x, &val_y, &adv_x)?)
    } else {
        None
    };
    if let Some(t) = &tuned {
        log::info!("threshold {:.6} (adversary max {:.6}, fn rate {:.4})", t.value, t.max_adversary_confidence, t.fn_rate);
    }

    Ok(TrainedAuthenticator {
        extractor,
        weights,
        standardizer,
        classifier,
        threshold: tuned.map(|t| t.value),
        provenance: Provenance {
            seeds,
            manifest_hash: dataset.manifest_hash.clone(),
            test_fraction: opts.test_fraction,
            validation_fraction: opts.validation_fraction,
            folds: opts.folds,
            adversaries: opts.adversaries,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        },
        tuning: TuningSummary {
            cv,
            validation_samples: parts.validation.len(),
            max_adversary_confidence: tuned.map(|t| t.max_adversary_confidence),
            fn_rate: tuned.map(|t| t.fn_rate),
        },
    })
}

fn cv_score(hp: &Hyperparams, x: &Matrix, y: &[usize], labels: &[String], k: usize, seed: u64) -> Result<CvScore> {
    let folds = stratified_folds(y, k, seed::derive(seed, &[0xF0]))?;
    let acc = fold_accuracies(hp, x, y, labels, &folds, seed::derive(seed, &[0xCF]))?;
    Ok(CvScore::from_accuracies(&acc))
}
