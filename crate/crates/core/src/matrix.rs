//! Compressed sparse row matrix shared by the feature encoder, the
//! clusterer and the classifiers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One sparse row: strictly increasing column indices with their values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVec {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVec {
    pub fn new() -> Self {
        Self::default()
    }

    /// Build from `(index, value)` pairs; zeros are dropped and the pairs sorted.
    pub fn from_pairs(mut pairs: Vec<(u32, f64)>) -> Self {
        pairs.sort_by_key(|p| p.0);
        let mut out = SparseVec::new();
        for (i, v) in pairs {
            if v == 0.0 {
                continue;
            }
            if out.indices.last() == Some(&i) {
                *out.values.last_mut().unwrap() += v;
            } else {
                out.indices.push(i);
                out.values.push(v);
            }
        }
        out
    }

    pub fn from_dense(dense: &[f64]) -> Self {
        let mut out = SparseVec::new();
        for (i, &v) in dense.iter().enumerate() {
            if v != 0.0 {
                out.indices.push(i as u32);
                out.values.push(v);
            }
        }
        out
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| (i as usize, v))
    }

    pub fn get(&self, col: usize) -> f64 {
        match self.indices.binary_search(&(col as u32)) {
            Ok(pos) => self.values[pos],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self, n_cols: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_cols];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsrMatrix {
    n_cols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl CsrMatrix {
    pub fn empty(n_cols: usize) -> Self {
        CsrMatrix {
            n_cols,
            indptr: vec![0],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn from_rows<'a, I>(n_cols: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a SparseVec>,
    {
        let mut m = CsrMatrix::empty(n_cols);
        for row in rows {
            m.push_row(row)?;
        }
        Ok(m)
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut m = CsrMatrix::empty(n_cols);
        for r in rows {
            if r.len() != n_cols {
                return Err(Error::DimensionMismatch {
                    expected: n_cols,
                    actual: r.len(),
                });
            }
            m.push_row(&SparseVec::from_dense(r))?;
        }
        Ok(m)
    }

    pub fn push_row(&mut self, row: &SparseVec) -> Result<()> {
        if let Some(&last) = row.indices.last() {
            if last as usize >= self.n_cols {
                return Err(Error::DimensionMismatch {
                    expected: self.n_cols,
                    actual: last as usize + 1,
                });
            }
        }
        self.indices.extend_from_slice(&row.indices);
        self.values.extend_from_slice(&row.values);
        self.indptr.push(self.indices.len());
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, i: usize) -> RowView<'_> {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        RowView {
            indices: &self.indices[a..b],
            values: &self.values[a..b],
        }
    }

    pub fn rows(&self) -> impl Iterator<Item = RowView<'_>> {
        (0..self.n_rows()).map(move |i| self.row(i))
    }

    pub fn select_rows(&self, rows: &[usize]) -> CsrMatrix {
        let mut m = CsrMatrix::empty(self.n_cols);
        for &r in rows {
            let view = self.row(r);
            m.indices.extend_from_slice(view.indices);
            m.values.extend_from_slice(view.values);
            m.indptr.push(m.indices.len());
        }
        m
    }

    /// Keep only the listed columns, renumbered in the given order.
    pub fn select_cols(&self, cols: &[usize]) -> CsrMatrix {
        let mut remap = vec![u32::MAX; self.n_cols];
        for (new, &old) in cols.iter().enumerate() {
            remap[old] = new as u32;
        }
        let mut m = CsrMatrix::empty(cols.len());
        for row in self.rows() {
            let pairs = row
                .iter()
                .filter(|(c, _)| remap[*c] != u32::MAX)
                .map(|(c, v)| (remap[c], v))
                .collect();
            let sv = SparseVec::from_pairs(pairs);
            m.indices.extend_from_slice(&sv.indices);
            m.values.extend_from_slice(&sv.values);
            m.indptr.push(m.indices.len());
        }
        m
    }

    /// Column-major copy: for each column the `(row, value)` nonzeros in row order.
    pub fn to_columns(&self) -> Vec<Vec<(u32, f64)>> {
        let mut cols = vec![Vec::new(); self.n_cols];
        for (r, row) in self.rows().enumerate() {
            for (c, v) in row.iter() {
                cols[c].push((r as u32, v));
            }
        }
        cols
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        self.rows().map(|r| r.to_dense(self.n_cols)).collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RowView<'a> {
    pub indices: &'a [u32],
    pub values: &'a [f64],
}

impl<'a> RowView<'a> {
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + 'a {
        self.indices
            .iter()
            .zip(self.values)
            .map(|(&i, &v)| (i as usize, v))
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.iter().map(|(i, v)| v * dense[i]).sum()
    }

    pub fn squared_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn get(&self, col: usize) -> f64 {
        match self.indices.binary_search(&(col as u32)) {
            Ok(pos) => self.values[pos],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self, n_cols: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_cols];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        out
    }

    pub fn to_sparse(&self) -> SparseVec {
        SparseVec {
            indices: self.indices.to_vec(),
            values: self.values.to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_round_trip() {
        let dense = vec![vec![0.0, 1.5, 0.0], vec![2.0, 0.0, 0.0], vec![0.0; 3]];
        let m = CsrMatrix::from_dense(&dense).unwrap();
        assert_eq!(m.n_rows(), 3);
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.to_dense(), dense);
    }

    #[test]
    fn select_rows_and_cols() {
        let dense = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]];
        let m = CsrMatrix::from_dense(&dense).unwrap();
        assert_eq!(m.select_rows(&[1, 1]).to_dense(), vec![vec![4.0, 5.0, 6.0]; 2]);
        assert_eq!(
            m.select_cols(&[2, 0]).to_dense(),
            vec![vec![3.0, 1.0], vec![6.0, 4.0]]
        );
    }

    #[test]
    fn push_row_rejects_out_of_range_column() {
        let mut m = CsrMatrix::empty(2);
        let row = SparseVec::from_pairs(vec![(5, 1.0)]);
        assert!(matches!(m.push_row(&row), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn from_pairs_sorts_and_merges() {
        let v = SparseVec::from_pairs(vec![(3, 1.0), (1, 2.0), (3, 1.0), (0, 0.0)]);
        assert_eq!(v.indices, vec![1, 3]);
        assert_eq!(v.values, vec![2.0, 2.0]);
    }
}
