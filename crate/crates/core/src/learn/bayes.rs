//! Multinomial naive Bayes with additive (Laplace) smoothing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{CsrMatrix, RowView};

pub const DEFAULT_ALPHA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayes {
    pub alpha: f64,
    /// Indexed by class: 0 = non-sensitive, 1 = sensitive.
    pub class_log_prior: [f64; 2],
    pub feature_log_prob: [Vec<f64>; 2],
}

impl NaiveBayes {
    pub fn fit(x: &CsrMatrix, y: &[bool], alpha: f64) -> Result<Self> {
        if x.rows().any(|r| r.values.iter().any(|&v| v < 0.0)) {
            return Err(Error::invalid("multinomial naive Bayes needs nonnegative features"));
        }
        let d = x.n_cols();
        let mut counts = [vec![0.0; d], vec![0.0; d]];
        let mut docs = [0usize; 2];
        for (row, &label) in x.rows().zip(y) {
            let c = label as usize;
            docs[c] += 1;
            for (j, v) in row.iter() {
                counts[c][j] += v;
            }
        }
        let n = (docs[0] + docs[1]) as f64;
        let class_log_prior = [(docs[0] as f64 / n).ln(), (docs[1] as f64 / n).ln()];
        let feature_log_prob = counts.map(|cnt| {
            let total: f64 = cnt.iter().sum::<f64>() + alpha * d as f64;
            cnt.iter().map(|&c| ((c + alpha) / total).ln()).collect::<Vec<f64>>()
        });
        Ok(NaiveBayes {
            alpha,
            class_log_prior,
            feature_log_prob,
        })
    }

    pub fn joint_log_likelihood(&self, row: &RowView<'_>) -> [f64; 2] {
        let mut jll = self.class_log_prior;
        for (j, v) in row.iter() {
            jll[0] += v * self.feature_log_prob[0][j];
            jll[1] += v * self.feature_log_prob[1][j];
        }
        jll
    }

    /// Posterior probability of the sensitive class.
    pub fn posterior(&self, row: &RowView<'_>) -> f64 {
        let [n, s] = self.joint_log_likelihood(row);
        1.0 / (1.0 + (n - s).exp())
    }

    pub fn predict_row(&self, row: &RowView<'_>) -> (bool, f64) {
        let [n, s] = self.joint_log_likelihood(row);
        (s >= n, 1.0 / (1.0 + (n - s).exp()))
    }
}
