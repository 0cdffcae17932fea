//! Six supervised classifiers over feature vectors.
//!
//! Every model predicts a label plus per-class probabilities. The confidence
//! attached to a prediction is the largest probability, except for the plain
//! decision tree, which reports none.
//!
//! Labels are kept in ascending order and every argmax breaks ties toward the
//! earlier label.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod boosting;
pub mod forest;
pub mod knn;
pub mod logistic;
pub mod matrix;
pub mod standardize;
pub mod svm;
pub mod tree;

pub use boosting::{BoostParams, BoostedTrees};
pub use forest::{DecisionTree, ForestParams, MaxFeatures, RandomForest};
pub use knn::{KnnModel, KnnParams};
pub use logistic::{lr_gradient, LinearParams, LogisticModel, LrParams};
pub use matrix::Matrix;
pub use standardize::Standardizer;
pub use svm::{SvmModel, SvmParams};
pub use tree::{Tree, TreeParams};

/// Early-stop threshold on the full gradient norm for LR and SVM.
pub const GRAD_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum ClassifierError {
    #[error("training data has {0} class(es); need at least 2")]
    SingleClass(usize),
    #[error("expected {expected} features, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("{samples} samples but {labels} labels")]
    LengthMismatch { samples: usize, labels: usize },
    #[error("invalid hyperparameters: {0}")]
    Hyperparams(String),
    #[error("unknown classifier kind {0:?}")]
    UnknownKind(String),
    #[error("model encoding: {0}")]
    Encoding(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassifierKind {
    Lr,
    Svm,
    Knn,
    Dt,
    Rf,
    Gbt,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 6] = [Self::Svm, Self::Lr, Self::Dt, Self::Knn, Self::Rf, Self::Gbt];

    pub fn name(self) -> &'static str {
        match self {
            Self::Lr => "lr",
            Self::Svm => "svm",
            Self::Knn => "knn",
            Self::Dt => "dt",
            Self::Rf => "rf",
            Self::Gbt => "gbt",
        }
    }

    /// Column heading used in reports.
    pub fn heading(self) -> &'static str {
        match self {
            Self::Lr => "LR",
            Self::Svm => "SVM",
            Self::Knn => "KNN",
            Self::Dt => "DT",
            Self::Rf => "RF",
            Self::Gbt => "XGB",
        }
    }

    pub fn parse(s: &str) -> Result<Self, ClassifierError> {
        match s.to_ascii_lowercase().as_str() {
            "lr" | "logistic" => Ok(Self::Lr),
            "svm" => Ok(Self::Svm),
            "knn" => Ok(Self::Knn),
            "dt" | "tree" => Ok(Self::Dt),
            "rf" | "forest" => Ok(Self::Rf),
            "gbt" | "xgb" | "xgboost" => Ok(Self::Gbt),
            _ => Err(ClassifierError::UnknownKind(s.to_string())),
        }
    }

    /// LR, SVM and KNN see z-scored features; trees see raw ones.
    pub fn uses_standardization(self) -> bool {
        matches!(self, Self::Lr | Self::Svm | Self::Knn)
    }

    pub fn has_confidence(self) -> bool {
        self != Self::Dt
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Hyperparams {
    Lr(LrParams),
    Svm(SvmParams),
    Knn(KnnParams),
    Dt(TreeParams),
    Rf(ForestParams),
    Gbt(BoostParams),
}

impl Hyperparams {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            Self::Lr(_) => ClassifierKind::Lr,
            Self::Svm(_) => ClassifierKind::Svm,
            Self::Knn(_) => ClassifierKind::Knn,
            Self::Dt(_) => ClassifierKind::Dt,
            Self::Rf(_) => ClassifierKind::Rf,
            Self::Gbt(_) => ClassifierKind::Gbt,
        }
    }

    pub fn default_for(kind: ClassifierKind) -> Self {
        match kind {
            ClassifierKind::Lr => Self::Lr(LrParams::default()),
            ClassifierKind::Svm => Self::Svm(SvmParams::default()),
            ClassifierKind::Knn => Self::Knn(KnnParams::default()),
            ClassifierKind::Dt => Self::Dt(TreeParams { max_depth: None }),
            ClassifierKind::Rf => Self::Rf(ForestParams::default()),
            ClassifierKind::Gbt => Self::Gbt(BoostParams::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Lr(LogisticModel),
    Svm(SvmModel),
    Knn(KnnModel),
    Dt(DecisionTree),
    Rf(RandomForest),
    Gbt(BoostedTrees),
}

/// A fitted classifier. Immutable after fit.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub labels: Vec<String>,
    pub dim: usize,
    pub hyperparams: Hyperparams,
    pub params: ModelParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: String,
    pub index: usize,
    /// Absent for decision trees.
    pub confidence: Option<f64>,
    /// Class probabilities in label order.
    pub scores: Vec<f64>,
}

/// Named f32 array stored in a model container.
#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub values: Vec<f32>,
}

impl Section {
    fn new(name: &str, values: Vec<f32>) -> Self {
        Self { name: name.to_string(), values }
    }
}

/// Index of the largest value, ties to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub(crate) fn normalize(v: &[f64]) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    if s <= 0.0 {
        return vec![1.0 / v.len() as f64; v.len()];
    }
    v.iter().map(|x| x / s).collect()
}

/// Sorted distinct labels and each sample's index into them.
pub fn encode_labels(y: &[String]) -> (Vec<String>, Vec<usize>) {
    let mut labels: Vec<String> = y.to_vec();
    labels.sort();
    labels.dedup();
    let idx = y.iter().map(|l| labels.binary_search(l).expect("label present")).collect();
    (labels, idx)
}

/// Fit on string labels.
pub fn fit(hp: &Hyperparams, x: &Matrix, y: &[String], seed: u64) -> Result<ClassifierModel, ClassifierError> {
    let (labels, idx) = encode_labels(y);
    fit_indexed(hp, x, &idx, labels, seed)
}

/// Fit on class indices into `labels`.
pub fn fit_indexed(
    hp: &Hyperparams,
    x: &Matrix,
    y: &[usize],
    labels: Vec<String>,
    seed: u64,
) -> Result<ClassifierModel, ClassifierError> {
    if x.rows != y.len() {
        return Err(ClassifierError::LengthMismatch { samples: x.rows, labels: y.len() });
    }
    let classes = labels.len();
    let mut present = vec![false; classes];
    for &c in y {
        if c >= classes {
            return Err(ClassifierError::Encoding(format!("class index {c} with {classes} labels")));
        }
        present[c] = true;
    }
    let seen = present.iter().filter(|&&p| p).count();
    if seen < 2 {
        return Err(ClassifierError::SingleClass(seen));
    }
    if x.cols == 0 {
        return Err(ClassifierError::Dimension { expected: 1, got: 0 });
    }
    let params = match hp {
        Hyperparams::Lr(p) => ModelParams::Lr(LogisticModel::fit(p, x, y, classes)?),
        Hyperparams::Svm(p) => ModelParams::Svm(SvmModel::fit(p, x, y, classes)?),
        Hyperparams::Knn(p) => ModelParams::Knn(KnnModel::fit(p, x, y, classes)?),
        Hyperparams::Dt(p) => ModelParams::Dt(DecisionTree::fit(p, x, y, classes)?),
        Hyperparams::Rf(p) => ModelParams::Rf(RandomForest::fit(p, x, y, classes, seed)?),
        Hyperparams::Gbt(p) => ModelParams::Gbt(BoostedTrees::fit(p, x, y, classes)?),
    };
    Ok(ClassifierModel { labels, dim: x.cols, hyperparams: hp.clone(), params })
}

impl ClassifierModel {
    pub fn kind(&self) -> ClassifierKind {
        self.hyperparams.kind()
    }

    pub fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>, ClassifierError> {
        if x.len() != self.dim {
            return Err(ClassifierError::Dimension { expected: self.dim, got: x.len() });
        }
        Ok(match &self.params {
            ModelParams::Lr(m) => m.probabilities(x),
            ModelParams::Svm(m) => m.probabilities(x),
            ModelParams::Knn(m) => m.probabilities(x),
            ModelParams::Dt(m) => m.probabilities(x),
            ModelParams::Rf(m) => m.probabilities(x),
            ModelParams::Gbt(m) => m.probabilities(x),
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<Prediction, ClassifierError> {
        let scores = self.probabilities(x)?;
        let index = argmax(&scores);
        let confidence = self.kind().has_confidence().then(|| scores[index]);
        Ok(Prediction { label: self.labels[index].clone(), index, confidence, scores })
    }

    /// Kind-specific extras for the container header plus f32 sections.
    pub fn encode(&self) -> (serde_json::Value, Vec<Section>) {
        let f32s = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<_>>();
        match &self.params {
            ModelParams::Lr(LogisticModel { params }) | ModelParams::Svm(SvmModel { params }) => (
                serde_json::Value::Null,
                vec![Section::new("weights", f32s(&params.weights)), Section::new("bias", f32s(&params.bias))],
            ),
            ModelParams::Knn(m) => (
                serde_json::json!({ "samples": m.points.rows }),
                vec![
                    Section::new("points", f32s(&m.points.data)),
                    Section::new("targets", m.targets.iter().map(|&t| t as f32).collect()),
                ],
            ),
            ModelParams::Dt(m) => (serde_json::Value::Null, vec![Section::new("tree", m.tree.encode())]),
            ModelParams::Rf(m) => (
                serde_json::json!({ "tree_seeds": m.tree_seeds }),
                vec![Section::new("trees", m.trees.iter().flat_map(|t| t.encode()).collect())],
            ),
            ModelParams::Gbt(m) => (
                serde_json::json!({ "rate": m.rate, "rounds": m.rounds.len() }),
                vec![Section::new("trees", m.rounds.iter().flatten().flat_map(|t| t.encode()).collect())],
            ),
        }
    }

    pub fn decode(
        hyperparams: Hyperparams,
        labels: Vec<String>,
        dim: usize,
        extra: &serde_json::Value,
        sections: &[Section],
    ) -> Result<Self, ClassifierError> {
        let classes = labels.len();
        let get = |name: &str| -> Result<Vec<f64>, ClassifierError> {
            sections
                .iter()
                .find(|s| s.name == name)
                .map(|s| s.values.iter().map(|&v| f64::from(v)).collect())
                .ok_or_else(|| ClassifierError::Encoding(format!("missing section {name}")))
        };
        let raw = |name: &str| -> Result<&[f32], ClassifierError> {
            sections
                .iter()
                .find(|s| s.name == name)
                .map(|s| s.values.as_slice())
                .ok_or_else(|| ClassifierError::Encoding(format!("missing section {name}")))
        };
        let linear = || -> Result<LinearParams, ClassifierError> {
            let weights = get("weights")?;
            let bias = get("bias")?;
            if weights.len() != classes * dim || bias.len() != classes {
                return Err(ClassifierError::Encoding("linear parameter shape".into()));
            }
            Ok(LinearParams { classes, dim, weights, bias })
        };
        let trees = |mut data: &[f32], count: usize| -> Result<Vec<Tree>, ClassifierError> {
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                let (t, rest) = Tree::decode(data)?;
                out.push(t);
                data = rest;
            }
            if !data.is_empty() {
                return Err(ClassifierError::Encoding("trailing tree data".into()));
            }
            Ok(out)
        };
        let params = match &hyperparams {
            Hyperparams::Lr(_) => ModelParams::Lr(LogisticModel { params: linear()? }),
            Hyperparams::Svm(_) => ModelParams::Svm(SvmModel { params: linear()? }),
            Hyperparams::Knn(p) => {
                let data = get("points")?;
                let targets: Vec<usize> = get("targets")?.into_iter().map(|t| t as usize).collect();
                if data.len() != targets.len() * dim || targets.iter().any(|&t| t >= classes) {
                    return Err(ClassifierError::Encoding("knn shape".into()));
                }
                ModelParams::Knn(KnnModel { k: p.k, points: Matrix::new(targets.len(), dim, data), targets, classes })
            }
            Hyperparams::Dt(_) => ModelParams::Dt(DecisionTree { tree: trees(raw("tree")?, 1)?.remove(0), classes }),
            Hyperparams::Rf(_) => {
                let tree_seeds: Vec<u64> = serde_json::from_value(extra["tree_seeds"].clone())
                    .map_err(|e| ClassifierError::Encoding(e.to_string()))?;
                let trees = trees(raw("trees")?, tree_seeds.len())?;
                ModelParams::Rf(RandomForest { trees, tree_seeds, classes })
            }
            Hyperparams::Gbt(_) => {
                let rate = extra["rate"].as_f64().ok_or_else(|| ClassifierError::Encoding("rate".into()))?;
                let n = extra["rounds"].as_u64().ok_or_else(|| ClassifierError::Encoding("rounds".into()))? as usize;
                let flat = trees(raw("trees")?, n * classes)?;
                let mut it = flat.into_iter();
                let rounds = (0..n).map(|_| it.by_ref().take(classes).collect()).collect();
                ModelParams::Gbt(BoostedTrees { rounds, rate, classes })
            }
        };
        Ok(Self { labels, dim, hyperparams, params })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> (Matrix, Vec<String>) {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for i in 0..12 {
            let t = i as f64 * 0.1;
            rows.push(vec![2.0 + t, 1.0 - t, 0.5 * t]);
            y.push("Alpha".to_string());
            rows.push(vec![-2.0 - t, 0.5 + t, -0.3 * t]);
            y.push("Beta".to_string());
        }
        (Matrix::from_rows(&rows), y)
    }

    #[test]
    fn argmax_ties_to_first() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn separable_lr_is_confident() {
        let (x, y) = blobs();
        let m = fit(&Hyperparams::Lr(LrParams { l2: 0.0, rate: 0.5, epochs: 2000 }), &x, &y, 0).unwrap();
        let mut conf = 0.0;
        for i in 0..x.rows {
            let p = m.predict(x.row(i)).unwrap();
            assert_eq!(p.label, y[i]);
            conf += p.confidence.unwrap();
        }
        assert!(conf / x.rows as f64 > 0.9);
    }

    #[test]
    fn knn_with_all_neighbours_is_undecided() {
        let (x, y) = blobs();
        let m = fit(&Hyperparams::Knn(KnnParams { k: x.rows }), &x, &y, 0).unwrap();
        for probe in [[0.0, 0.0, 0.0], [5.0, 5.0, 5.0]] {
            let p = m.predict(&probe).unwrap();
            assert_eq!(p.confidence, Some(0.5));
            assert_eq!(p.label, "Alpha");
        }
    }

    #[test]
    fn single_tree_forest_matches_tree_on_training_data() {
        let (x, y) = blobs();
        let dt = fit(&Hyperparams::Dt(TreeParams { max_depth: None }), &x, &y, 0).unwrap();
        let rf = fit(
            &Hyperparams::Rf(ForestParams { trees: 1, max_depth: None, bootstrap: false, max_features: MaxFeatures::Sqrt }),
            &x,
            &y,
            3,
        )
        .unwrap();
        for i in 0..x.rows {
            assert_eq!(dt.predict(x.row(i)).unwrap().label, rf.predict(x.row(i)).unwrap().label);
        }
    }

    #[test]
    fn decision_tree_has_no_confidence() {
        let (x, y) = blobs();
        let dt = fit(&Hyperparams::Dt(TreeParams { max_depth: Some(3) }), &x, &y, 0).unwrap();
        assert_eq!(dt.predict(x.row(0)).unwrap().confidence, None);
    }

    #[test]
    fn errors() {
        let (x, y) = blobs();
        let one_class = vec!["Alpha".to_string(); x.rows];
        assert_eq!(
            fit(&Hyperparams::default_for(ClassifierKind::Lr), &x, &one_class, 0).unwrap_err(),
            ClassifierError::SingleClass(1)
        );
        assert!(matches!(
            fit(&Hyperparams::default_for(ClassifierKind::Lr), &x, &y[1..], 0),
            Err(ClassifierError::LengthMismatch { .. })
        ));
        let m = fit(&Hyperparams::default_for(ClassifierKind::Knn), &x, &y, 0).unwrap();
        assert_eq!(m.predict(&[1.0]).unwrap_err(), ClassifierError::Dimension { expected: 3, got: 1 });
        assert!(fit(&Hyperparams::Lr(LrParams { l2: 0.0, rate: -1.0, epochs: 5 }), &x, &y, 0).is_err());
        assert!(ClassifierKind::parse("xgboost").is_ok());
        assert!(ClassifierKind::parse("nn").is_err());
    }

    #[test]
    fn every_kind_encodes_and_decodes() {
        let (x, y) = blobs();
        for kind in ClassifierKind::ALL {
            let hp = match kind {
                ClassifierKind::Rf => Hyperparams::Rf(ForestParams { trees: 5, ..Default::default() }),
                ClassifierKind::Gbt => Hyperparams::Gbt(BoostParams { rounds: 5, rate: 0.1, max_depth: 2 }),
                k => Hyperparams::default_for(k),
            };
            let m = fit(&hp, &x, &y, 9).unwrap();
            let (extra, sections) = m.encode();
            let extra: serde_json::Value = serde_json::from_str(&serde_json::to_string(&extra).unwrap()).unwrap();
            let back = ClassifierModel::decode(hp.clone(), m.labels.clone(), m.dim, &extra, &sections).unwrap();
            assert_eq!(back, m, "{kind}");
        }
    }
}
