use rayon::prelude::*;

use super::Tensor;
use crate::error::{Error, Result};

/// Compressed-row sparse matrix.
///
/// Column indices inside each row are strictly increasing. Instances are
/// immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets. Duplicate coordinates are
    /// summed.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = triplets.into_iter().collect();
        for &(r, c, _) in &entries {
            if r >= rows || c >= cols {
                return Err(Error::shape("SparseMatrix::from_triplets", &[r, c], &[rows, cols]));
            }
        }
        entries.sort_by_key(|e| (e.0, e.1));
        let mut row_offsets = vec![0usize; rows + 1];
        let mut col_indices = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            last = Some((r, c));
            row_offsets[r + 1] += 1;
            col_indices.push(c);
            values.push(v);
        }
        for r in 0..rows {
            row_offsets[r + 1] += row_offsets[r];
        }
        Ok(Self {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn from_dense(t: &Tensor) -> Self {
        let (r, c) = (t.rows(), t.cols());
        let trip = (0..r).flat_map(|i| {
            (0..c).filter_map(move |j| {
                let v = t.get(i, j);
                (v != 0.0).then_some((i, j, v))
            })
        });
        Self::from_triplets(r, c, trip).expect("indices in range by construction")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Same sparsity pattern with new values.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len());
        Self {
            values,
            ..self.clone()
        }
    }

    /// `(column, value)` pairs of one row.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_offsets[r]..self.row_offsets[r + 1];
        self.col_indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.row_offsets[r + 1] - self.row_offsets[r]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let span = self.row_offsets[r]..self.row_offsets[r + 1];
        match self.col_indices[span.clone()].binary_search(&c) {
            Ok(i) => self.values[span.start + i],
            Err(_) => 0.0,
        }
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        let span = self.row_offsets[r]..self.row_offsets[r + 1];
        self.col_indices[span].binary_search(&c).is_ok()
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.rows, self.cols]);
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                t.set(r, c, v);
            }
        }
        t
    }

    pub fn transpose(&self) -> Self {
        let trip = (0..self.rows).flat_map(|r| self.row(r).map(move |(c, v)| (c, r, v)));
        Self::from_triplets(self.cols, self.rows, trip).expect("in range")
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.rows != self.cols {
            return false;
        }
        (0..self.rows).all(|r| self.row(r).all(|(c, v)| (self.get(c, r) - v).abs() <= tol))
    }

    /// `self · dense`.
    pub fn spmm(&self, b: &Tensor) -> Result<Tensor> {
        if b.shape().len() != 2 || b.rows() != self.cols {
            return Err(Error::shape("spmm", &[self.rows, self.cols], b.shape()));
        }
        let n = b.cols();
        let mut out = vec![0.0; self.rows * n];
        let kernel = |(r, out_row): (usize, &mut [f64])| {
            for (c, v) in self.row(r) {
                for (o, x) in out_row.iter_mut().zip(b.row(c)) {
                    *o += v * x;
                }
            }
        };
        if n > 0 {
            if self.nnz() * n >= 1 << 16 {
                out.par_chunks_mut(n).enumerate().for_each(kernel);
            } else {
                out.chunks_mut(n).enumerate().for_each(kernel);
            }
        }
        Tensor::matrix(self.rows, n, out)
    }

    /// `selfᵀ · dense`, used to push gradients back through `spmm`.
    pub fn spmm_t(&self, g: &Tensor) -> Result<Tensor> {
        if g.shape().len() != 2 || g.rows() != self.rows {
            return Err(Error::shape("spmm_t", &[self.rows, self.cols], g.shape()));
        }
        let n = g.cols();
        let mut out = Tensor::zeros(&[self.cols, n]);
        let data = out.data_mut();
        for r in 0..self.rows {
            let g_row = g.row(r);
            for (c, v) in self.row(r) {
                for (o, x) in data[c * n..(c + 1) * n].iter_mut().zip(g_row) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }
}
