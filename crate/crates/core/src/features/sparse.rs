use nalgebra::DMatrix;

use crate::autodiff::Tensor;

/// Compressed sparse row matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from rows of `(column, value)` pairs; columns must be increasing.
    pub fn from_rows(cols: usize, rows: &[Vec<(usize, f64)>]) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for r in rows {
            for &(c, v) in r {
                debug_assert!(c < cols);
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        SparseMatrix { rows: rows.len(), cols, indptr, indices, values }
    }

    pub fn from_dense(t: &Tensor) -> Self {
        let rows: Vec<Vec<(usize, f64)>> = (0..t.rows())
            .map(|r| {
                t.row(r).iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(c, &v)| (c, v)).collect()
            })
            .collect();
        Self::from_rows(t.cols(), &rows)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self · m` for a dense `(cols, p)` matrix.
    pub fn mul_dense(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        debug_assert_eq!(m.nrows(), self.cols);
        let p = m.ncols();
        let mut out = DMatrix::zeros(self.rows, p);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                for j in 0..p {
                    out[(r, j)] += v * m[(c, j)];
                }
            }
        }
        out
    }

    /// `selfᵀ · m` for a dense `(rows, p)` matrix.
    pub fn transpose_mul_dense(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        debug_assert_eq!(m.nrows(), self.rows);
        let p = m.ncols();
        let mut out = DMatrix::zeros(self.cols, p);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                for j in 0..p {
                    out[(c, j)] += v * m[(r, j)];
                }
            }
        }
        out
    }
}
