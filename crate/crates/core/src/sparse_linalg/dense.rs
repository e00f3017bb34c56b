use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub type DenseMatrix = DMatrix<f64>;

/// LU factorization with partial pivoting, stored row-major in place.
#[derive(Clone, Debug)]
pub struct DenseLu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

/// Factorizes a square matrix; fails when a pivot is negligible relative to the matrix scale.
pub fn dense_lu_factor(m: &DenseMatrix) -> Result<DenseLu> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    let n = m.nrows();
    let mut lu = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            lu[i * n + j] = m[(i, j)];
        }
    }
    let scale = lu.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let (mut p, mut best) = (k, lu[k * n + k].abs());
        for i in k + 1..n {
            let v = lu[i * n + k].abs();
            if v > best {
                best = v;
                p = i;
            }
        }
        if !(best > f64::EPSILON * scale * n as f64) {
            return Err(Error::Singular {
                row: k,
                pivot: best,
            });
        }
        if p != k {
            for j in 0..n {
                lu.swap(k * n + j, p * n + j);
            }
            perm.swap(k, p);
        }
        let piv = lu[k * n + k];
        for i in k + 1..n {
            let f = lu[i * n + k] / piv;
            lu[i * n + k] = f;
            if f != 0.0 {
                for j in k + 1..n {
                    lu[i * n + j] -= f * lu[k * n + j];
                }
            }
        }
    }
    Ok(DenseLu { n, lu, perm })
}

/// Solves with a factorization from [`dense_lu_factor`].
pub fn dense_lu_solve(fact: &DenseLu, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != fact.n {
        return Err(Error::DimensionMismatch {
            expected: fact.n,
            got: b.len(),
        });
    }
    let mut x = b.to_vec();
    fact.solve_in_place(&mut x);
    Ok(x)
}

impl DenseLu {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let n = self.n;
        let mut y: Vec<f64> = self.perm.iter().map(|&p| x[p]).collect();
        for i in 0..n {
            let row = &self.lu[i * n..i * n + i];
            let s: f64 = row.iter().zip(&y[..i]).map(|(a, b)| a * b).sum();
            y[i] -= s;
        }
        for i in (0..n).rev() {
            let row = &self.lu[i * n + i + 1..(i + 1) * n];
            let s: f64 = row.iter().zip(&y[i + 1..]).map(|(a, b)| a * b).sum();
            y[i] = (y[i] - s) / self.lu[i * n + i];
        }
        x.copy_from_slice(&y);
    }

    /// Dense inverse, column by column.
    pub fn inverse(&self) -> DenseMatrix {
        let n = self.n;
        let mut inv = DenseMatrix::zeros(n, n);
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            self.solve_in_place(&mut e);
            for i in 0..n {
                inv[(i, j)] = e[i];
            }
        }
        inv
    }
}

/// Eigenvalues (ascending) of the symmetric-definite pencil `A x = λ B x`,
/// via Cholesky reduction `L⁻¹ A L⁻ᵀ` of `B = L Lᵀ`.
pub fn generalized_sym_eig(a: &DenseMatrix, b: &DenseMatrix) -> Result<Vec<f64>> {
    let reduced = cholesky_reduce(a, b)?;
    let mut vals: Vec<f64> = SymmetricEigen::new(reduced)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    vals.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(vals)
}

/// Eigenvalues and B-orthonormal eigenvectors (as columns) of the pencil.
pub fn generalized_sym_eigh(a: &DenseMatrix, b: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix)> {
    let chol = b
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("B in generalized eigenproblem".into()))?;
    let reduced = reduce_with(&chol, a);
    let eig = SymmetricEigen::new(reduced);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let l_t = chol.l().transpose();
    let mut vecs = DenseMatrix::zeros(a.nrows(), a.nrows());
    for (col, &i) in order.iter().enumerate() {
        let y = eig.eigenvectors.column(i).into_owned();
        let x = l_t
            .solve_upper_triangular(&y)
            .expect("Cholesky factor is nonsingular");
        vecs.set_column(col, &x);
    }
    Ok((vals, vecs))
}

fn cholesky_reduce(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.nrows() != a.ncols() || b.nrows() != b.ncols() || a.nrows() != b.nrows() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: b.nrows(),
        });
    }
    let chol = b
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("B in generalized eigenproblem".into()))?;
    Ok(reduce_with(&chol, a))
}

fn reduce_with(chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>, a: &DenseMatrix) -> DenseMatrix {
    let l = chol.l();
    // L⁻¹ A L⁻ᵀ = L⁻¹ (L⁻¹ A)ᵀ since A is symmetric.
    let la = l.solve_lower_triangular(a).expect("nonsingular");
    let c = l
        .solve_lower_triangular(&la.transpose())
        .expect("nonsingular");
    (&c + c.transpose()) * 0.5
}

/// Eigenvalues (ascending) of a symmetric matrix.
pub fn sym_eigenvalues(a: &DenseMatrix) -> Vec<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let mut vals: Vec<f64> = SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    vals.sort_by(|x, y| x.partial_cmp(y).unwrap());
    vals
}

/// Inverse of a symmetric positive definite matrix through its Cholesky factor.
pub fn spd_inverse(a: &DenseMatrix) -> Result<DenseMatrix> {
    a.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::NotPositiveDefinite("dense inverse".into()))
}
