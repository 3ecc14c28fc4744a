use nalgebra::DMatrix;

use crate::error::{PalsError, Result};

/// Sparse matrix in row-major sorted triplet form with row pointers.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseJacobian {
    n_rows: usize,
    n_cols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseJacobian {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        SparseJacobian { n_rows, n_cols, row_ptr: vec![0; n_rows + 1], cols: Vec::new(), vals: Vec::new() }
    }

    /// Sorts by `(row, col)` and sums duplicates.
    pub fn from_triplets(n_rows: usize, n_cols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Result<Self> {
        if let Some(t) = triplets.iter().find(|t| t.0 >= n_rows || t.1 >= n_cols) {
            return Err(PalsError::Contract(format!(
                "triplet ({}, {}) outside a {n_rows}×{n_cols} matrix",
                t.0, t.1
            )));
        }
        if let Some(t) = triplets.iter().find(|t| !t.2.is_finite()) {
            return Err(PalsError::Numerical(format!("non-finite Jacobian entry at ({}, {})", t.0, t.1)));
        }
        triplets.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0usize; n_rows + 1];
        let mut cols: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
                continue;
            }
            cols.push(c);
            vals.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..n_rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(SparseJacobian { n_rows, n_cols, row_ptr, cols, vals })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_ptr[r], self.row_ptr[r + 1]);
        (&self.cols[a..b], &self.vals[a..b])
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n_rows).flat_map(move |r| {
            let (c, v) = self.row(r);
            c.iter().zip(v).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).map(|i| vals[i]).unwrap_or(0.0)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n_rows, self.n_cols);
        for (r, c, v) in self.triplets() {
            m[(r, c)] = v;
        }
        m
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut row_ptr = vec![0usize; m.nrows() + 1];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                let v = m[(r, c)];
                if v != 0.0 {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr[r + 1] = cols.len();
        }
        SparseJacobian { n_rows: m.nrows(), n_cols: m.ncols(), row_ptr, cols, vals }
    }

    /// Rows with at least one stored entry.
    pub fn nonzero_rows(&self) -> Vec<usize> {
        (0..self.n_rows).filter(|&r| self.row_ptr[r + 1] > self.row_ptr[r]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed_and_sorted() {
        let j = SparseJacobian::from_triplets(3, 4, vec![(2, 1, 1.0), (0, 3, 2.0), (2, 1, 0.5), (0, 0, -1.0)]).unwrap();
        assert_eq!(j.nnz(), 3);
        assert_eq!(j.get(2, 1), 1.5);
        assert_eq!(j.row(0).0, &[0, 3]);
        assert_eq!(j.nonzero_rows(), vec![0, 2]);
        assert_eq!(SparseJacobian::from_dense(&j.to_dense()), j);
    }

    #[test]
    fn rejects_out_of_range_and_non_finite() {
        assert!(SparseJacobian::from_triplets(2, 2, vec![(2, 0, 1.0)]).is_err());
        assert!(SparseJacobian::from_triplets(2, 2, vec![(0, 0, f64::NAN)]).is_err());
    }
}
