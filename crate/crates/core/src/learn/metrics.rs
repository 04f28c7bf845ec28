use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Confusion counts with the sensitive class as positive, plus the derived
/// rates. Zero denominators yield 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(rename = "tp")]
    pub true_pos: u64,
    #[serde(rename = "fp")]
    pub false_pos: u64,
    #[serde(rename = "fn")]
    pub false_neg: u64,
    #[serde(rename = "tn")]
    pub true_neg: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        0.0
    } else {
        a / b
    }
}

impl Metrics {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        let (tpf, fpf, fnf, tnf) = (tp as f64, fp as f64, fn_ as f64, tn as f64);
        let precision = ratio(tpf, tpf + fpf);
        let recall = ratio(tpf, tpf + fnf);
        Metrics {
            true_pos: tp,
            false_pos: fp,
            false_neg: fn_,
            true_neg: tn,
            accuracy: ratio(tpf + tnf, tpf + fpf + fnf + tnf),
            precision,
            recall,
            f1: ratio(2.0 * precision * recall, precision + recall),
        }
    }

    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }

    /// Row-normalized confusion matrix `[[tn, fp], [fn, tp]]`, rows = truth
    /// (non-sensitive, sensitive).
    pub fn row_normalized(&self) -> [[f64; 2]; 2] {
        let neg = (self.true_neg + self.false_pos) as f64;
        let pos = (self.false_neg + self.true_pos) as f64;
        [
            [ratio(self.true_neg as f64, neg), ratio(self.false_pos as f64, neg)],
            [ratio(self.false_neg as f64, pos), ratio(self.true_pos as f64, pos)],
        ]
    }

    pub fn add(&self, other: &Metrics) -> Metrics {
        Metrics::from_counts(
            self.true_pos + other.true_pos,
            self.false_pos + other.false_pos,
            self.false_neg + other.false_neg,
            self.true_neg + other.true_neg,
        )
    }

    pub const CSV_HEADER: [&'static str; 8] = ["tp", "fp", "fn", "tn", "accuracy", "precision", "recall", "f1"];

    pub fn csv_row(&self) -> [String; 8] {
        [
            self.true_pos.to_string(),
            self.false_pos.to_string(),
            self.false_neg.to_string(),
            self.true_neg.to_string(),
            format!("{:.4}", self.accuracy),
            format!("{:.4}", self.precision),
            format!("{:.4}", self.recall),
            format!("{:.4}", self.f1),
        ]
    }
}

pub fn evaluate(predicted: &[bool], truth: &[bool]) -> Result<Metrics> {
    if predicted.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            actual: predicted.len(),
        });
    }
    if truth.is_empty() {
        return Err(Error::invalid("cannot evaluate zero predictions"));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(Metrics::from_counts(tp, fp, fn_, tn))
}

/// Unweighted average of per-fold rates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MeanMetrics {
    pub fn of(folds: &[Metrics]) -> Self {
        if folds.is_empty() {
            return MeanMetrics::default();
        }
        let n = folds.len() as f64;
        MeanMetrics {
            accuracy: folds.iter().map(|m| m.accuracy).sum::<f64>() / n,
            precision: folds.iter().map(|m| m.precision).sum::<f64>() / n,
            recall: folds.iter().map(|m| m.recall).sum::<f64>() / n,
            f1: folds.iter().map(|m| m.f1).sum::<f64>() / n,
        }
    }
}
