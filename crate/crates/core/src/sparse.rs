//! Compressed sparse rows for node features.
//!
//! Bag-of-words features are ~1% dense; every product that reads raw features
//! (the first backbone layer and the mixup projection) goes through this type.

use crate::error::{Result, TgsError};
use crate::matrix::DenseMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_dense(m: &DenseMatrix) -> Self {
        let mut indptr = Vec::with_capacity(m.rows() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for i in 0..m.rows() {
            for (j, &v) in m.row(i).iter().enumerate() {
                if v != 0.0 {
                    indices.push(j);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self { rows: m.rows(), cols: m.cols(), indptr, indices, values }
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

    /// `(column, value)` pairs of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.indptr[i]..self.indptr[i + 1];
        self.indices[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn gather_rows(&self, ids: &[usize]) -> Self {
        let mut indptr = Vec::with_capacity(ids.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for &i in ids {
            let r = self.indptr[i]..self.indptr[i + 1];
            indices.extend_from_slice(&self.indices[r.clone()]);
            values.extend_from_slice(&self.values[r]);
            indptr.push(indices.len());
        }
        Self { rows: ids.len(), cols: self.cols, indptr, indices, values }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for i in 0..self.rows {
            for (j, v) in self.row(i) {
                out.set(i, j, v);
            }
        }
        out
    }

    /// `self · rhs`
    pub fn matmul(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        if self.cols != rhs.rows() {
            return Err(TgsError::Shape(format!(
                "sparse matmul: {}x{} · {}x{}",
                self.rows,
                self.cols,
                rhs.rows(),
                rhs.cols()
            )));
        }
        let n = rhs.cols();
        let mut out = DenseMatrix::zeros(self.rows, n);
        for i in 0..self.rows {
            let out_row = out.row_mut(i);
            for (k, a) in self.row(i) {
                for (o, &b) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · rhs`
    pub fn matmul_tn(&self, rhs: &DenseMatrix) -> Result<DenseMatrix> {
        if self.rows != rhs.rows() {
            return Err(TgsError::Shape(format!(
                "sparse matmul_tn: ({}x{})ᵀ · {}x{}",
                self.rows,
                self.cols,
                rhs.rows(),
                rhs.cols()
            )));
        }
        let mut out = DenseMatrix::zeros(self.cols, rhs.cols());
        for i in 0..self.rows {
            let b_row = rhs.row(i);
            for (k, a) in self.row(i) {
                for (o, &b) in out.row_mut(k).iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sparse_products_match_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = DenseMatrix::from_fn(9, 30, |_, _| if rng.gen_bool(0.15) { rng.gen_range(-2.0..2.0) } else { 0.0 });
        let w = DenseMatrix::from_fn(30, 4, |_, _| rng.gen_range(-1.0..1.0));
        let up = DenseMatrix::from_fn(9, 4, |_, _| rng.gen_range(-1.0..1.0));
        let s = SparseMatrix::from_dense(&x);
        assert_eq!(s.to_dense(), x);
        let close = |a: DenseMatrix, b: DenseMatrix| {
            assert_eq!(a.shape(), b.shape());
            assert!(a.data().iter().zip(b.data()).all(|(p, q)| (p - q).abs() < 1e-12));
        };
        close(s.matmul(&w).unwrap(), x.matmul(&w).unwrap());
        close(s.matmul_tn(&up).unwrap(), x.matmul_tn(&up).unwrap());
        let ids = [4, 0, 4, 8];
        assert_eq!(s.gather_rows(&ids).to_dense(), x.gather_rows(&ids));
    }
}
