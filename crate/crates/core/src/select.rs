//! Mutual-information feature ranking.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureCategory, FeatureSpec};
use crate::matrix::CsrMatrix;

pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScore {
    pub index: usize,
    pub name: String,
    pub category: FeatureCategory,
    /// Nats.
    pub mi: f64,
}

/// Plug-in mutual information of a contingency table (rows: feature bins,
/// columns: label classes), in nats.
pub fn mi_from_contingency(table: &[Vec<u64>]) -> f64 {
    let n: u64 = table.iter().flatten().sum();
    if n == 0 {
        return 0.0;
    }
    let n_cols = table.iter().map(Vec::len).max().unwrap_or(0);
    let row_tot: Vec<u64> = table.iter().map(|r| r.iter().sum()).collect();
    let col_tot: Vec<u64> = (0..n_cols)
        .map(|j| table.iter().map(|r| r.get(j).copied().unwrap_or(0)).sum())
        .collect();
    let n = n as f64;
    let mut mi = 0.0;
    for (r, row) in table.iter().enumerate() {
        for (c, &nxy) in row.iter().enumerate() {
            if nxy == 0 {
                continue;
            }
            let nxy = nxy as f64;
            mi += nxy / n * (nxy * n / (row_tot[r] as f64 * col_tot[c] as f64)).ln();
        }
    }
    mi.max(0.0)
}

/// Bin index per value: 0/1 columns keep their two natural bins, anything
/// else is cut into `bins` equal-width intervals over its observed range.
pub fn discretize(column: &[f64], bins: usize) -> Vec<usize> {
    let binary = column.iter().all(|&v| v == 0.0 || v == 1.0);
    if binary {
        return column.iter().map(|&v| v as usize).collect();
    }
    let (lo, hi) = column
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let width = hi - lo;
    let bins = bins.max(1);
    column
        .iter()
        .map(|&v| {
            if !(width > 0.0) {
                0
            } else {
                (((v - lo) / width * bins as f64) as usize).min(bins - 1)
            }
        })
        .collect()
}

pub fn mutual_information(column: &[f64], labels: &[bool], bins: usize) -> Result<f64> {
    if column.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            actual: column.len(),
        });
    }
    if column.len() < 2 {
        return Err(Error::invalid("mutual information needs at least two samples"));
    }
    let binned = discretize(column, bins);
    let n_bins = binned.iter().max().map_or(1, |m| m + 1);
    let mut table = vec![vec![0u64; 2]; n_bins];
    for (&b, &y) in binned.iter().zip(labels) {
        table[b][y as usize] += 1;
    }
    Ok(mi_from_contingency(&table))
}

/// Score every column and return the `k` best, highest MI first, ties by
/// ascending feature index.
pub fn top_k(matrix: &CsrMatrix, labels: &[bool], k: usize, spec: &FeatureSpec, bins: usize) -> Result<Vec<FeatureScore>> {
    if matrix.n_rows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            actual: matrix.n_rows(),
        });
    }
    if matrix.n_cols() != spec.len() {
        return Err(Error::DimensionMismatch {
            expected: spec.len(),
            actual: matrix.n_cols(),
        });
    }
    if k > matrix.n_cols() {
        return Err(Error::invalid(format!("k = {k} exceeds feature count {}", matrix.n_cols())));
    }
    let columns = matrix.to_columns();
    let mut dense = vec![0.0; matrix.n_rows()];
    let mut scores = Vec::with_capacity(columns.len());
    for (j, col) in columns.iter().enumerate() {
        for &(r, v) in col {
            dense[r as usize] = v;
        }
        let mi = mutual_information(&dense, labels, bins)?;
        for &(r, _) in col {
            dense[r as usize] = 0.0;
        }
        let (name, category) = spec.feature_name(j).expect("column within spec");
        scores.push(FeatureScore { index: j, name, category, mi });
    }
    scores.sort_by(|a, b| b.mi.total_cmp(&a.mi).then(a.index.cmp(&b.index)));
    scores.truncate(k);
    Ok(scores)
}

/// Count of selected features per category; every category is present.
pub fn category_histogram(scores: &[FeatureScore]) -> BTreeMap<FeatureCategory, usize> {
    let mut h: BTreeMap<FeatureCategory, usize> = FeatureCategory::ALL.iter().map(|c| (*c, 0)).collect();
    for s in scores {
        *h.entry(s.category).or_default() += 1;
    }
    h
}

pub fn write_ranking<W: std::io::Write>(scores: &[FeatureScore], w: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["rank", "category", "name", "mi"])?;
    for (i, s) in scores.iter().enumerate() {
        w.write_record([
            (i + 1).to_string(),
            s.category.as_str().to_string(),
            s.name.clone(),
            format!("{:.6}", s.mi),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}
