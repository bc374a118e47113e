use rayon::prelude::*;

use super::matrix::Matrix;
use crate::error::{Error, Result};

const PAR_THRESHOLD: usize = 1 << 15;

/// Compressed sparse row matrix. Column indices are sorted within each row
/// and unique.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Duplicate coordinates are summed.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|(r, c, _)| *r >= rows || *c >= cols) {
            return Err(Error::shape(
                "SparseMatrix::from_triplets",
                format!("entry ({r}, {c}) outside {rows}x{cols}"),
            ));
        }
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut indptr = vec![0; rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            indices.push(c);
            values.push(v);
            indptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    /// Keeps only the nonzero entries of `dense`.
    pub fn from_dense(dense: &Matrix) -> Self {
        let mut indptr = Vec::with_capacity(dense.rows() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for r in 0..dense.rows() {
            for (c, &v) in dense.row(r).iter().enumerate() {
                if v != 0.0 {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            rows: dense.rows(),
            cols: dense.cols(),
            indptr,
            indices,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `r`.
    #[inline]
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[r], self.indptr[r + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    /// Entry lookup by binary search within the row.
    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (idx, vals) = self.row(r);
        match idx.binary_search(&c) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Matrix {
        let mut out = Matrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            let (idx, vals) = self.row(r);
            for (&c, &v) in idx.iter().zip(vals) {
                out[(r, c)] = v;
            }
        }
        out
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            let (idx, vals) = self.row(r);
            for (&c, &v) in idx.iter().zip(vals) {
                triplets.push((c, r, v));
            }
        }
        SparseMatrix::from_triplets(self.cols, self.rows, triplets)
            .expect("transpose stays in bounds")
    }

    /// Same sparsity pattern with every value mapped through `f(index, value)`,
    /// where `index` is the position in the value array.
    pub fn map_values(&self, mut f: impl FnMut(usize, f64) -> f64) -> SparseMatrix {
        SparseMatrix {
            rows: self.rows,
            cols: self.cols,
            indptr: self.indptr.clone(),
            indices: self.indices.clone(),
            values: self
                .values
                .iter()
                .enumerate()
                .map(|(i, &v)| f(i, v))
                .collect(),
        }
    }

    /// Scales each row to unit L1 norm; all-zero rows stay zero.
    pub fn row_normalized(&self) -> SparseMatrix {
        let mut out = self.clone();
        for r in 0..self.rows {
            let (a, b) = (self.indptr[r], self.indptr[r + 1]);
            let s: f64 = out.values[a..b].iter().map(|v| v.abs()).sum();
            if s > 0.0 {
                for v in &mut out.values[a..b] {
                    *v /= s;
                }
            }
        }
        out
    }

    /// `self · rhs` for a dense right-hand side.
    pub fn mul_dense(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows() {
            return Err(Error::shape(
                "sparse_dense_matmul",
                format!("{:?} x {:?}", self.shape(), rhs.shape()),
            ));
        }
        let width = rhs.cols();
        let mut out = Matrix::zeros(self.rows, width);
        if width == 0 {
            return Ok(out);
        }
        let kernel = |(r, out_row): (usize, &mut [f64])| {
            let (idx, vals) = self.row(r);
            for (&c, &v) in idx.iter().zip(vals) {
                for (o, &b) in out_row.iter_mut().zip(rhs.row(c)) {
                    *o += v * b;
                }
            }
        };
        if self.nnz() * width >= PAR_THRESHOLD {
            out.data_mut()
                .par_chunks_mut(width)
                .enumerate()
                .for_each(kernel);
        } else {
            out.data_mut()
                .chunks_mut(width)
                .enumerate()
                .for_each(kernel);
        }
        Ok(out)
    }

    /// `selfᵀ · rhs` without materializing the transpose.
    pub fn t_mul_dense(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.rows != rhs.rows() {
            return Err(Error::shape(
                "sparse_t_dense_matmul",
                format!("{:?}ᵀ x {:?}", self.shape(), rhs.shape()),
            ));
        }
        let width = rhs.cols();
        let mut out = Matrix::zeros(self.cols, width);
        for r in 0..self.rows {
            let (idx, vals) = self.row(r);
            let src = rhs.row(r);
            for (&c, &v) in idx.iter().zip(vals) {
                for (o, &b) in out.row_mut(c).iter_mut().zip(src) {
                    *o += v * b;
                }
            }
        }
        Ok(out)
    }

    /// Sparse-sparse product `self · rhs`; exact zeros produced by
    /// cancellation are kept out of the result.
    pub fn mul_sparse(&self, rhs: &SparseMatrix) -> Result<SparseMatrix> {
        if self.cols != rhs.rows {
            return Err(Error::shape(
                "sparse_sparse_matmul",
                format!("{:?} x {:?}", self.shape(), rhs.shape()),
            ));
        }
        let mut acc = vec![0.0; rhs.cols];
        let mut touched = vec![false; rhs.cols];
        let mut pattern: Vec<usize> = Vec::new();
        let mut indptr = Vec::with_capacity(self.rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for r in 0..self.rows {
            let (idx, vals) = self.row(r);
            for (&k, &a) in idx.iter().zip(vals) {
                let (cidx, cvals) = rhs.row(k);
                for (&c, &b) in cidx.iter().zip(cvals) {
                    if !touched[c] {
                        touched[c] = true;
                        pattern.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            pattern.sort_unstable();
            for &c in &pattern {
                if acc[c] != 0.0 {
                    indices.push(c);
                    values.push(acc[c]);
                }
                acc[c] = 0.0;
                touched[c] = false;
            }
            pattern.clear();
            indptr.push(indices.len());
        }
        Ok(SparseMatrix {
            rows: self.rows,
            cols: rhs.cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && *self == self.transpose()
    }
}
