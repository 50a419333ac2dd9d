//! Compressed sparse row matrices.
//!
//! Only what the rest of the crate needs: construction from triplets,
//! transposition, sparse × dense products and row access. Column indices
//! within a row are always sorted and unique.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets. Duplicates are summed.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nrows];
        for (r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r},{c}) out of bounds");
            rows[r].push((c, v));
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut iter = row.into_iter().peekable();
            while let Some((c, mut v)) = iter.next() {
                while let Some(&(c2, v2)) = iter.peek() {
                    if c2 != c {
                        break;
                    }
                    v += v2;
                    iter.next();
                }
                indices.push(c);
                data.push(v);
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        }
    }

    /// Builds a matrix from already-sorted rows of `(col, value)` pairs.
    pub fn from_rows(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let nrows = rows.len();
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for row in rows {
            debug_assert!(row.windows(2).all(|w| w[0].0 < w[1].0));
            for (c, v) in row {
                debug_assert!(c < ncols);
                indices.push(c);
                data.push(v);
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        CsrMatrix {
            nrows: n,
            ncols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            data: vec![1.0; n],
        }
    }

    /// Keeps every entry whose value is not exactly zero.
    pub fn from_dense(dense: &ArrayView2<f64>) -> Self {
        let (nrows, ncols) = dense.dim();
        let rows = dense
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(c, &v)| (c, v))
                    .collect()
            })
            .collect();
        let mut m = Self::from_rows(ncols, rows);
        m.nrows = nrows;
        m
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.nrows, self.ncols));
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out[[r, c]] = v;
            }
        }
        out
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.nrows, self.ncols)
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let span = self.indptr[r]..self.indptr[r + 1];
        (&self.indices[span.clone()], &self.data[span])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(pos) => vals[pos],
            Err(_) => 0.0,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    /// Iterates `(row, col, value)` in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.nrows).map(|r| self.row(r).1.iter().sum()).collect()
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.indices {
            counts[c + 1] += 1;
        }
        for i in 0..self.ncols {
            counts[i + 1] += counts[i];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0; self.nnz()];
        let mut data = vec![0.0; self.nnz()];
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                let slot = next[c];
                indices[slot] = r;
                data[slot] = v;
                next[c] += 1;
            }
        }
        CsrMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            indptr,
            indices,
            data,
        }
    }

    /// Exact (bitwise) symmetry check.
    pub fn is_symmetric(&self) -> bool {
        self.nrows == self.ncols && *self == self.transpose()
    }

    /// Applies `f(row, col, value)` to every stored entry.
    pub fn map_entries(&self, f: impl Fn(usize, usize, f64) -> f64) -> CsrMatrix {
        let mut out = self.clone();
        for r in 0..self.nrows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                out.data[k] = f(r, self.indices[k], self.data[k]);
            }
        }
        out
    }

    /// `self · rhs` for a dense right-hand side.
    pub fn matmul_dense(&self, rhs: &ArrayView2<f64>) -> Result<Array2<f64>> {
        if self.ncols != rhs.nrows() {
            return Err(Error::Shape {
                op: "sparse_matmul",
                left: self.shape(),
                right: rhs.dim(),
            });
        }
        let width = rhs.ncols();
        let mut out = Array2::<f64>::zeros((self.nrows, width));
        let rhs_std = rhs.as_standard_layout();
        let rhs_slice = rhs_std.as_slice().expect("standard layout");
        {
            let out_slice = out.as_slice_mut().expect("fresh array is contiguous");
            for r in 0..self.nrows {
                let acc = &mut out_slice[r * width..(r + 1) * width];
                let (cols, vals) = self.row(r);
                for (&c, &v) in cols.iter().zip(vals) {
                    let src = &rhs_slice[c * width..(c + 1) * width];
                    for (a, &s) in acc.iter_mut().zip(src) {
                        *a += v * s;
                    }
                }
            }
        }
        Ok(out)
    }

    /// `x · self` for a dense row vector `x`, written into `out`.
    pub fn vecmat_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(out.len(), self.ncols);
        out.iter_mut().for_each(|v| *v = 0.0);
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            let (cols, vals) = self.row(r);
            for (&c, &v) in cols.iter().zip(vals) {
                out[c] += xr * v;
            }
        }
    }

    /// `(self + selfᵀ) / 2`.
    pub fn symmetrized(&self) -> CsrMatrix {
        assert_eq!(self.nrows, self.ncols, "symmetrize needs a square matrix");
        let t = self.transpose();
        CsrMatrix::from_triplets(
            self.nrows,
            self.ncols,
            self.iter()
                .map(|(r, c, v)| (r, c, 0.5 * v))
                .chain(t.iter().map(|(r, c, v)| (r, c, 0.5 * v))),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn triplets_sum_duplicates_and_sort() {
        let m = CsrMatrix::from_triplets(2, 3, [(0, 2, 1.0), (0, 0, 2.0), (0, 2, 0.5), (1, 1, 3.0)]);
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.row(0).0, &[0, 2]);
        assert_eq!(m.get(0, 2), 1.5);
        assert_eq!(m.get(1, 0), 0.0);
    }

    #[test]
    fn transpose_and_dense_agree() {
        let d = array![[1.0, 0.0, 2.0], [0.0, 3.0, 0.0]];
        let m = CsrMatrix::from_dense(&d.view());
        assert_eq!(m.to_dense(), d);
        assert_eq!(m.transpose().to_dense(), d.t().to_owned());
    }

    #[test]
    fn sparse_dense_product() {
        let a = CsrMatrix::from_dense(&array![[1.0, 2.0], [0.0, 1.0]].view());
        let b = array![[1.0, 1.0, 0.0], [2.0, 0.0, 1.0]];
        let got = a.matmul_dense(&b.view()).unwrap();
        assert_eq!(got, array![[5.0, 1.0, 2.0], [2.0, 0.0, 1.0]]);
        assert!(a.matmul_dense(&b.t()).is_err());
    }

    #[test]
    fn vecmat_matches_dense() {
        let d = array![[1.0, 0.0, 2.0], [0.5, 3.0, 0.0]];
        let m = CsrMatrix::from_dense(&d.view());
        let mut out = vec![0.0; 3];
        m.vecmat_into(&[2.0, 1.0], &mut out);
        assert_eq!(out, vec![2.5, 3.0, 4.0]);
    }

    #[test]
    fn symmetrized_is_symmetric() {
        let m = CsrMatrix::from_triplets(3, 3, [(0, 1, 1.0), (2, 0, 0.3), (1, 1, 2.0)]);
        let s = m.symmetrized();
        assert!(s.is_symmetric());
        assert_eq!(s.get(1, 0), 0.5);
        assert_eq!(s.get(1, 1), 2.0);
    }
}
