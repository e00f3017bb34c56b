use super::CsrMatrix;
use crate::error::{Error, Result};

/// Cholesky factorization of a symmetric positive definite sparse matrix in
/// banded storage. Used as the direct solver for coarse grids and for exact
/// (1,1)-block solves; structured-grid numbering keeps the bandwidth at
/// O(sqrt(n)).
#[derive(Clone, Debug)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    // row i holds L[i, i-bw ..= i]
    band: Vec<f64>,
}

impl BandedCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::DimensionMismatch {
                expected: a.nrows(),
                got: a.ncols(),
            });
        }
        let n = a.nrows();
        let mut bw = 0;
        for i in 0..n {
            let (cols, _) = a.row(i);
            if let Some(&c0) = cols.first() {
                if c0 < i {
                    bw = bw.max(i - c0);
                }
            }
        }
        let stride = bw + 1;
        let mut band = vec![0.0; n * stride];
        for i in 0..n {
            let (cols, vals) = a.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if j <= i {
                    band[i * stride + (j + bw - i)] = v;
                }
            }
        }
        for i in 0..n {
            let lo_i = i.saturating_sub(bw);
            for j in lo_i..=i {
                let lo = lo_i.max(j.saturating_sub(bw));
                let mut s = band[i * stride + (j + bw - i)];
                if lo < j {
                    let ri = &band[i * stride + (lo + bw - i)..i * stride + (j + bw - i)];
                    let rj = &band[j * stride + (lo + bw - j)..j * stride + bw];
                    s -= ri.iter().zip(rj).map(|(x, y)| x * y).sum::<f64>();
                }
                if j == i {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::NotPositiveDefinite(format!(
                            "nonpositive pivot {s:e} at row {i}"
                        )));
                    }
                    band[i * stride + bw] = s.sqrt();
                } else {
                    band[i * stride + (j + bw - i)] = s / band[j * stride + bw];
                }
            }
        }
        Ok(Self { n, bw, band })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, bw, stride) = (self.n, self.bw, self.bw + 1);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let row = &self.band[i * stride + (lo + bw - i)..i * stride + bw];
            let s: f64 = row.iter().zip(&x[lo..i]).map(|(a, b)| a * b).sum();
            x[i] = (x[i] - s) / self.band[i * stride + bw];
        }
        for i in (0..n).rev() {
            x[i] /= self.band[i * stride + bw];
            let xi = x[i];
            let lo = i.saturating_sub(bw);
            let row = &self.band[i * stride + (lo + bw - i)..i * stride + bw];
            for (xk, l) in x[lo..i].iter_mut().zip(row) {
                *xk -= l * xi;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
