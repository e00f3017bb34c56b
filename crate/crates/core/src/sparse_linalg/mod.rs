//! Sparse and dense linear algebra used by the discretization and solvers.

mod banded;
mod csr;
mod dense;
mod fgmres;

pub use banded::BandedCholesky;
pub(crate) use csr::CompensatedVec;
pub use csr::CsrMatrix;
pub use dense::{
    dense_lu_factor, dense_lu_solve, generalized_sym_eig, generalized_sym_eigh, spd_inverse,
    sym_eigenvalues, DenseLu, DenseMatrix,
};
pub use fgmres::{fgmres, FgmresOptions, SolveReport};

use crate::error::Result;

/// A square linear map `y = A x`.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);

    /// `r = b − A x`. Implementations may evaluate this more accurately than `apply`.
    fn residual(&self, b: &[f64], x: &[f64], r: &mut [f64]) {
        self.apply(x, r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
    }
}

/// An approximate inverse `z ≈ A⁻¹ r`. May be nonlinear (e.g. contain inner iterations).
pub trait Preconditioner {
    fn precondition(&self, r: &[f64], z: &mut [f64]) -> Result<()>;
}

pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn precondition(&self, r: &[f64], z: &mut [f64]) -> Result<()> {
        z.copy_from_slice(r);
        Ok(())
    }
}

impl Preconditioner for BandedCholesky {
    fn precondition(&self, r: &[f64], z: &mut [f64]) -> Result<()> {
        z.copy_from_slice(r);
        self.solve_in_place(z);
        Ok(())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// y += alpha x
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
