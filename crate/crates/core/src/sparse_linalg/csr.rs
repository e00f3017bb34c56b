use std::io::Write;

use nalgebra::DMatrix;

use super::LinearOperator;
use crate::error::{Error, Result};

/// Compressed sparse row matrix with sorted, unique column indices per row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a matrix from (row, col, value) triplets. Duplicates are summed.
    pub fn from_triplets(
        nrows: usize,
        ncols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<Self> {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            if r >= nrows || c >= ncols {
                return Err(Error::InvalidArgument(format!(
                    "triplet ({r}, {c}) outside {nrows}x{ncols}"
                )));
            }
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        let mut next = counts.clone();
        for &(r, c, v) in triplets {
            let slot = next[r];
            cols[slot] = c;
            vals[slot] = v;
            next[r] += 1;
        }

        let mut row_offsets = Vec::with_capacity(nrows + 1);
        let mut col_indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        row_offsets.push(0);
        let mut scratch: Vec<(usize, f64)> = Vec::new();
        for r in 0..nrows {
            scratch.clear();
            scratch.extend((counts[r]..counts[r + 1]).map(|k| (cols[k], vals[k])));
            scratch.sort_by_key(|&(c, _)| c);
            let mut k = 0;
            while k < scratch.len() {
                let c = scratch[k].0;
                let mut v = 0.0;
                while k < scratch.len() && scratch[k].0 == c {
                    v += scratch[k].1;
                    k += 1;
                }
                col_indices.push(c);
                values.push(v);
            }
            row_offsets.push(col_indices.len());
        }
        Ok(Self {
            nrows,
            ncols,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_offsets: (0..=n).collect(),
            col_indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            row_offsets: vec![0; nrows + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut trip = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)] != 0.0 {
                    trip.push((i, j, m[(i, j)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), m.ncols(), &trip).expect("indices in range")
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_offsets[i], self.row_offsets[i + 1]);
        (&self.col_indices[a..b], &self.values[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.nrows.min(self.ncols))
            .map(|i| self.get(i, i))
            .collect()
    }

    /// y = M x
    pub fn spmv(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.ncols {
            return Err(Error::DimensionMismatch {
                expected: self.ncols,
                got: x.len(),
            });
        }
        let mut y = vec![0.0; self.nrows];
        self.spmv_into(x, &mut y);
        Ok(y)
    }

    /// y = M x without size checks beyond debug assertions.
    pub fn spmv_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let (a, b) = (self.row_offsets[i], self.row_offsets[i + 1]);
            let mut s = 0.0;
            for k in a..b {
                s += self.values[k] * x[self.col_indices[k]];
            }
            *yi = s;
        }
    }

    /// y = Mᵀ x
    pub fn spmv_transpose_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        y.iter_mut().for_each(|v| *v = 0.0);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            let (a, b) = (self.row_offsets[i], self.row_offsets[i + 1]);
            for k in a..b {
                y[self.col_indices[k]] += self.values[k] * xi;
            }
        }
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.col_indices {
            counts[c + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut col_indices = vec![0; self.nnz()];
        let mut values = vec![0.0; self.nnz()];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&c, &v) in cols.iter().zip(vals) {
                let slot = next[c];
                col_indices[slot] = i;
                values[slot] = v;
                next[c] += 1;
            }
        }
        Self {
            nrows: self.ncols,
            ncols: self.nrows,
            row_offsets: counts,
            col_indices,
            values,
        }
    }

    /// Entrywise `self + alpha * other`; the pattern is the union of both.
    pub fn add_scaled(&self, alpha: f64, other: &CsrMatrix) -> Result<Self> {
        if self.nrows != other.nrows || self.ncols != other.ncols {
            return Err(Error::DimensionMismatch {
                expected: self.nrows,
                got: other.nrows,
            });
        }
        let mut trip = self.triplets();
        trip.extend(
            other
                .triplets()
                .into_iter()
                .map(|(i, j, v)| (i, j, alpha * v)),
        );
        Self::from_triplets(self.nrows, self.ncols, &trip)
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            out.extend(cols.iter().zip(vals).map(|(&j, &v)| (i, j, v)));
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Dense principal submatrix on the index set `idx` (rows and columns).
    pub fn principal_submatrix(&self, idx: &[usize]) -> DMatrix<f64> {
        self.submatrix(idx, idx)
    }

    /// Dense submatrix with the given row and column index sets.
    pub fn submatrix(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        let mut lookup = std::collections::HashMap::with_capacity(cols.len());
        for (k, &c) in cols.iter().enumerate() {
            lookup.insert(c, k);
        }
        let mut m = DMatrix::zeros(rows.len(), cols.len());
        for (a, &i) in rows.iter().enumerate() {
            let (cs, vs) = self.row(i);
            for (&j, &v) in cs.iter().zip(vs) {
                if let Some(&b) = lookup.get(&j) {
                    m[(a, b)] = v;
                }
            }
        }
        m
    }

    /// Writes the matrix in Matrix Market coordinate format (1-based indices).
    pub fn write_matrix_market<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(out, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for (i, j, v) in self.triplets() {
            writeln!(out, "{} {} {:.17e}", i + 1, j + 1, v)?;
        }
        Ok(())
    }
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.nrows
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.spmv_into(x, y);
    }

    fn residual(&self, b: &[f64], x: &[f64], r: &mut [f64]) {
        let mut acc = CompensatedVec::new(b);
        self.sub_spmv_compensated(x, &mut acc);
        acc.finish(r);
    }
}

impl CsrMatrix {
    /// acc −= M x
    pub(crate) fn sub_spmv_compensated(&self, x: &[f64], acc: &mut CompensatedVec) {
        for i in 0..self.nrows {
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                acc.sub_product(i, self.values[k], x[self.col_indices[k]]);
            }
        }
    }

    /// acc −= Mᵀ x
    pub(crate) fn sub_spmv_transpose_compensated(&self, x: &[f64], acc: &mut CompensatedVec) {
        for (i, &xi) in x.iter().enumerate() {
            for k in self.row_offsets[i]..self.row_offsets[i + 1] {
                acc.sub_product(self.col_indices[k], self.values[k], xi);
            }
        }
    }
}

/// Vector of running sums that also tracks the rounding error of every update
/// (TwoSum for the addition, FMA for the product), giving roughly twice the
/// working precision. Used for residuals, where `b − A x` cancels heavily once
/// `A` has large entries.
pub(crate) struct CompensatedVec {
    sum: Vec<f64>,
    err: Vec<f64>,
}

impl CompensatedVec {
    pub(crate) fn new(init: &[f64]) -> Self {
        Self {
            sum: init.to_vec(),
            err: vec![0.0; init.len()],
        }
    }

    #[inline]
    pub(crate) fn sub_product(&mut self, i: usize, a: f64, x: f64) {
        let p = -a * x;
        let pe = (-a).mul_add(x, -p);
        let s = self.sum[i] + p;
        let bb = s - self.sum[i];
        let se = (self.sum[i] - (s - bb)) + (p - bb);
        self.sum[i] = s;
        self.err[i] += pe + se;
    }

    pub(crate) fn finish(self, out: &mut [f64]) {
        for ((o, s), e) in out.iter_mut().zip(&self.sum).zip(&self.err) {
            *o = s + e;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn compensated_residual_survives_cancellation() {
        // rows sum to zero against x = 1, with a tiny b
        let m = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1e16), (0, 1, -1e16 + 2.0), (1, 1, 1.0)])
            .unwrap();
        let x = [1.0 + f64::EPSILON, 1.0];
        let b = [3.0, 1.0];
        let mut r = [0.0; 2];
        m.residual(&b, &x, &mut r);
        // exact: 3 − (1e16(1+ε) − 1e16 + 2) = 1 − 1e16 ε
        let exact = 1.0 - 1e16 * f64::EPSILON;
        assert!((r[0] - exact).abs() < 1e-12, "{}", r[0]);
        assert_eq!(r[1], 0.0);
    }
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_spmv_returns_input() {
        let x = vec![1.0, -2.0, 3.5];
        assert_eq!(CsrMatrix::identity(3).spmv(&x).unwrap(), x);
    }

    #[test]
    fn zero_matrix_gives_zero() {
        let y = CsrMatrix::zeros(4, 3).spmv(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(y, vec![0.0; 4]);
    }

    #[test]
    fn random_spmv_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut trip = Vec::new();
        for i in 0..5 {
            for j in 0..5 {
                if rng.gen_bool(0.5) {
                    trip.push((i, j, rng.gen_range(-1.0..1.0)));
                }
            }
        }
        let m = CsrMatrix::from_triplets(5, 5, &trip).unwrap();
        let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y = m.spmv(&x).unwrap();
        let dense = m.to_dense();
        for i in 0..5 {
            let expect: f64 = (0..5).map(|j| dense[(i, j)] * x[j]).sum();
            assert!((y[i] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn duplicates_are_summed_and_sorted() {
        let m = CsrMatrix::from_triplets(2, 3, &[(0, 2, 1.0), (0, 0, 2.0), (0, 2, 0.5)]).unwrap();
        assert_eq!(m.row(0).0, &[0, 2]);
        assert_eq!(m.get(0, 2), 1.5);
    }

    #[test]
    fn size_mismatch_is_reported() {
        assert!(CsrMatrix::identity(3).spmv(&[1.0]).is_err());
    }

    #[test]
    fn transpose_matches_dense_transpose() {
        let m = CsrMatrix::from_triplets(2, 3, &[(0, 1, 1.0), (1, 2, -3.0), (1, 0, 4.0)]).unwrap();
        assert_eq!(m.transpose().to_dense(), m.to_dense().transpose());
        let mut y = vec![0.0; 3];
        m.spmv_transpose_into(&[1.0, 2.0], &mut y);
        assert_eq!(y, m.transpose().spmv(&[1.0, 2.0]).unwrap());
    }
}
