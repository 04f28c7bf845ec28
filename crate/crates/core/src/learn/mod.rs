//! Supervised sensitivity classifiers over metadata features.

mod bayes;
mod forest;
mod linear;
mod metrics;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use bayes::{NaiveBayes, DEFAULT_ALPHA};
pub use forest::{fit_forest, ForestParams, MaxFeatures, Node, RandomForest, Tree};
pub use linear::{fit_logistic, fit_svm, lbfgs, logistic_objective, sigmoid, LbfgsOptions, LbfgsOutcome, LinearModel, SvmOptions};
pub use metrics::{evaluate, MeanMetrics, Metrics};

use crate::error::{Error, Result};
use crate::matrix::{CsrMatrix, RowView};

pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelFamily {
    MultinomialNb,
    LogisticRegression,
    LinearSvm,
    RandomForest,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 4] = [
        ModelFamily::MultinomialNb,
        ModelFamily::LogisticRegression,
        ModelFamily::LinearSvm,
        ModelFamily::RandomForest,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::MultinomialNb => "multinomial-nb",
            ModelFamily::LogisticRegression => "logistic-regression",
            ModelFamily::LinearSvm => "linear-svm",
            ModelFamily::RandomForest => "random-forest",
        }
    }

    /// Regularization constant used when none is configured.
    pub fn default_c(self) -> f64 {
        match self {
            ModelFamily::LogisticRegression => 0.9,
            ModelFamily::LinearSvm => 0.8,
            _ => 1.0,
        }
    }

    pub fn uses_c(self) -> bool {
        matches!(self, ModelFamily::LogisticRegression | ModelFamily::LinearSvm)
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "multinomial-nb" | "nb" | "naive-bayes" => Ok(ModelFamily::MultinomialNb),
            "logistic-regression" | "lr" | "logistic" => Ok(ModelFamily::LogisticRegression),
            "linear-svm" | "svm" => Ok(ModelFamily::LinearSvm),
            "random-forest" | "rf" | "forest" => Ok(ModelFamily::RandomForest),
            _ => Err(Error::Config(format!("unknown model family '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassWeight {
    #[default]
    None,
    /// Weight each sample by `N / (2 · n_class)`.
    Balanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub family: ModelFamily,
    /// Falls back to the family default when unset.
    pub c: Option<f64>,
    pub class_weight: ClassWeight,
    pub forest: ForestParams,
    pub seed: u64,
    pub folds: usize,
    pub lbfgs: LbfgsOptions,
    pub svm_max_epochs: usize,
    pub svm_tolerance: f64,
    pub nb_alpha: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            family: ModelFamily::RandomForest,
            c: None,
            class_weight: ClassWeight::None,
            forest: ForestParams::default(),
            seed: 42,
            folds: 5,
            lbfgs: LbfgsOptions::default(),
            svm_max_epochs: 1000,
            svm_tolerance: 1e-3,
            nb_alpha: DEFAULT_ALPHA,
        }
    }
}

impl TrainConfig {
    pub fn for_family(family: ModelFamily) -> Self {
        TrainConfig {
            family,
            ..TrainConfig::default()
        }
    }

    pub fn effective_c(&self) -> f64 {
        self.c.unwrap_or_else(|| self.family.default_c())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ModelParams {
    MultinomialNb(NaiveBayes),
    LogisticRegression(LinearModel),
    LinearSvm(LinearModel),
    RandomForest(RandomForest),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub version: u32,
    /// Fingerprint of the feature spec the model was trained against.
    pub fingerprint: String,
    pub n_features: usize,
    pub c: Option<f64>,
    pub class_weight: ClassWeight,
    pub params: ModelParams,
}

impl TrainedModel {
    pub fn family(&self) -> ModelFamily {
        match self.params {
            ModelParams::MultinomialNb(_) => ModelFamily::MultinomialNb,
            ModelParams::LogisticRegression(_) => ModelFamily::LogisticRegression,
            ModelParams::LinearSvm(_) => ModelFamily::LinearSvm,
            ModelParams::RandomForest(_) => ModelFamily::RandomForest,
        }
    }

    /// `(label, score)` for one encoded row. Scores are the sensitive-class
    /// posterior (NB), sigmoid of the margin (LR), raw margin (SVM) or the
    /// fraction of trees voting sensitive (RF).
    pub fn predict_row(&self, row: &RowView<'_>) -> (bool, f64) {
        match &self.params {
            ModelParams::MultinomialNb(nb) => nb.predict_row(row),
            ModelParams::LogisticRegression(m) => {
                let z = m.margin(row);
                (z >= 0.0, sigmoid(z))
            }
            ModelParams::LinearSvm(m) => {
                let z = m.margin(row);
                (z >= 0.0, z)
            }
            ModelParams::RandomForest(f) => f.predict_row(row),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: TrainedModel = serde_json::from_str(&text)?;
        if model.version != MODEL_VERSION {
            return Err(Error::Config(format!(
                "model version {} is not supported (expected {MODEL_VERSION})",
                model.version
            )));
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub labels: Vec<bool>,
    pub scores: Vec<f64>,
}

pub fn sample_weights(y: &[bool], mode: ClassWeight) -> Vec<f64> {
    match mode {
        ClassWeight::None => vec![1.0; y.len()],
        ClassWeight::Balanced => {
            let pos = y.iter().filter(|&&v| v).count() as f64;
            let neg = y.len() as f64 - pos;
            let n = y.len() as f64;
            y.iter()
                .map(|&v| if v { n / (2.0 * pos) } else { n / (2.0 * neg) })
                .collect()
        }
    }
}

fn check_training_input(x: &CsrMatrix, y: &[bool]) -> Result<()> {
    if x.n_rows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.n_rows(),
            actual: y.len(),
        });
    }
    let pos = y.iter().filter(|&&v| v).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::invalid("training data must contain both classes"));
    }
    if x.rows().any(|r| r.values.iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid("training data contains non-finite values"));
    }
    Ok(())
}

pub fn train(x: &CsrMatrix, y: &[bool], cfg: &TrainConfig, fingerprint: &str) -> Result<TrainedModel> {
    check_training_input(x, y)?;
    let c = cfg.effective_c();
    if cfg.family.uses_c() && !(c.is_finite() && c > 0.0) {
        return Err(Error::Config(format!("C must be positive, got {c}")));
    }
    let sw = sample_weights(y, cfg.class_weight);
    let params = match cfg.family {
        // class weights do not enter the multinomial likelihood
        ModelFamily::MultinomialNb => ModelParams::MultinomialNb(NaiveBayes::fit(x, y, cfg.nb_alpha)?),
        ModelFamily::LogisticRegression => ModelParams::LogisticRegression(fit_logistic(x, y, &sw, c, &cfg.lbfgs).0),
        ModelFamily::LinearSvm => {
            let opts = SvmOptions {
                max_epochs: cfg.svm_max_epochs,
                tolerance: cfg.svm_tolerance,
                seed: crate::seed::derive(cfg.seed, "svm"),
            };
            ModelParams::LinearSvm(fit_svm(x, y, &sw, c, &opts).0)
        }
        ModelFamily::RandomForest => {
            if cfg.forest.n_trees == 0 {
                return Err(Error::Config("random forest needs at least one tree".into()));
            }
            ModelParams::RandomForest(fit_forest(x, y, &sw, &cfg.forest, crate::seed::derive(cfg.seed, "forest")))
        }
    };
    Ok(TrainedModel {
        version: MODEL_VERSION,
        fingerprint: fingerprint.to_string(),
        n_features: x.n_cols(),
        c: cfg.family.uses_c().then_some(c),
        class_weight: cfg.class_weight,
        params,
    })
}

/// Predicts every row; refuses matrices encoded under a different feature
/// spec.
pub fn predict(model: &TrainedModel, x: &CsrMatrix, fingerprint: &str) -> Result<Predictions> {
    if model.fingerprint != fingerprint {
        return Err(Error::FingerprintMismatch {
            expected: model.fingerprint.clone(),
            actual: fingerprint.to_string(),
        });
    }
    if x.n_cols() != model.n_features {
        return Err(Error::DimensionMismatch {
            expected: model.n_features,
            actual: x.n_cols(),
        });
    }
    let (labels, scores) = x.rows().map(|r| model.predict_row(&r)).unzip();
    Ok(Predictions { labels, scores })
}

/// Fold index per sample, stratified by class. Each class is shuffled and
/// dealt round-robin, continuing the rotation across classes so fold sizes
/// differ by at most one.
pub fn stratified_folds(y: &[bool], k: usize, seed: u64) -> Result<Vec<usize>> {
    let pos: Vec<usize> = (0..y.len()).filter(|&i| y[i]).collect();
    let neg: Vec<usize> = (0..y.len()).filter(|&i| !y[i]).collect();
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    if pos.len() < k || neg.len() < k {
        return Err(Error::invalid(format!(
            "{k} folds need at least {k} samples per class (have {} sensitive, {} non-sensitive)",
            pos.len(),
            neg.len()
        )));
    }
    let mut rng = crate::seed::rng(seed);
    let mut fold = vec![0; y.len()];
    let mut next = 0;
    for mut class in [neg, pos] {
        class.shuffle(&mut rng);
        for i in class {
            fold[i] = next % k;
            next += 1;
        }
    }
    Ok(fold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub family: ModelFamily,
    pub c: Option<f64>,
    pub folds: Vec<Metrics>,
    pub mean: MeanMetrics,
    /// Counts summed over all held-out folds.
    pub pooled: Metrics,
}

pub fn cross_validate(x: &CsrMatrix, y: &[bool], cfg: &TrainConfig) -> Result<CvResult> {
    check_training_input(x, y)?;
    let fold_of = stratified_folds(y, cfg.folds, crate::seed::derive(cfg.seed, "folds"))?;
    let mut folds = Vec::with_capacity(cfg.folds);
    for f in 0..cfg.folds {
        let train_idx: Vec<usize> = (0..y.len()).filter(|&i| fold_of[i] != f).collect();
        let test_idx: Vec<usize> = (0..y.len()).filter(|&i| fold_of[i] == f).collect();
        let y_train: Vec<bool> = train_idx.iter().map(|&i| y[i]).collect();
        let y_test: Vec<bool> = test_idx.iter().map(|&i| y[i]).collect();
        let model = train(&x.select_rows(&train_idx), &y_train, cfg, "cv")?;
        let pred = predict(&model, &x.select_rows(&test_idx), "cv")?;
        folds.push(evaluate(&pred.labels, &y_test)?);
    }
    let pooled = folds
        .iter()
        .fold(Metrics::from_counts(0, 0, 0, 0), |acc, m| acc.add(m));
    Ok(CvResult {
        family: cfg.family,
        c: cfg.family.uses_c().then(|| cfg.effective_c()),
        mean: MeanMetrics::of(&folds),
        folds,
        pooled,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best_c: f64,
    pub table: Vec<CvResult>,
}

/// Picks the C with the highest mean CV accuracy. Duplicate grid values are
/// evaluated once; ties go to the smaller C.
pub fn grid_search(x: &CsrMatrix, y: &[bool], cfg: &TrainConfig, grid: &[f64]) -> Result<GridResult> {
    let mut values: Vec<f64> = grid.to_vec();
    if values.is_empty() {
        return Err(Error::Config("empty C grid".into()));
    }
    if let Some(bad) = values.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
        return Err(Error::Config(format!("C must be positive, got {bad}")));
    }
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mut table = Vec::with_capacity(values.len());
    let mut best: Option<(f64, f64)> = None;
    for &c in &values {
        let run = TrainConfig {
            c: Some(c),
            ..cfg.clone()
        };
        let res = cross_validate(x, y, &run)?;
        if best.map_or(true, |(_, acc)| res.mean.accuracy > acc) {
            best = Some((c, res.mean.accuracy));
        }
        table.push(res);
    }
    Ok(GridResult {
        best_c: best.map(|b| b.0).unwrap_or(values[0]),
        table,
    })
}
