use nalgebra::{Cholesky, DVector, Dyn};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::StarPatch;
use crate::sparse_linalg::{dot, norm2, CsrMatrix};

/// Additive smoother `x ← x + τ D⁻¹ (b − A x)`.
pub trait Smoother: Send + Sync {
    /// `out = τ D⁻¹ r`.
    fn correction(&self, r: &[f64], out: &mut [f64]);
    fn damping(&self) -> f64;
}

/// Applies `steps` damped corrections to `x`.
pub fn smooth(s: &dyn Smoother, a: &CsrMatrix, x: &mut [f64], b: &[f64], steps: usize) {
    let n = x.len();
    let mut r = vec![0.0; n];
    let mut c = vec![0.0; n];
    for _ in 0..steps {
        a.spmv_into(x, &mut r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        s.correction(&r, &mut c);
        for (xi, ci) in x.iter_mut().zip(&c) {
            *xi += ci;
        }
    }
}

/// Parallel subspace correction over vertex-star patches.
pub struct StarSmoother {
    patches: Vec<(Vec<usize>, Cholesky<f64, Dyn>)>,
    tau: f64,
    n: usize,
}

impl StarSmoother {
    /// Factorizes `A[patch, patch]` for every nonempty patch. The damping defaults to
    /// `1 / N_o`, with `N_o` the largest number of patches sharing one dof.
    pub fn new(a: &CsrMatrix, patches: &[StarPatch]) -> Result<Self> {
        let dof_sets: Vec<Vec<usize>> = patches
            .iter()
            .map(|p| p.interior_velocity_dofs.clone())
            .filter(|d| !d.is_empty())
            .collect();
        Self::from_dof_sets(a, dof_sets, None)
    }

    pub fn from_dof_sets(a: &CsrMatrix, sets: Vec<Vec<usize>>, tau: Option<f64>) -> Result<Self> {
        let n = a.nrows();
        let mut overlap = vec![0usize; n];
        for s in &sets {
            for &d in s {
                if d >= n {
                    return Err(Error::InvalidArgument(format!(
                        "patch dof {d} out of range"
                    )));
                }
                overlap[d] += 1;
            }
        }
        let n_o = overlap.iter().copied().max().unwrap_or(1).max(1);
        let patches = sets
            .into_par_iter()
            .map(|dofs| {
                let m = a.principal_submatrix(&dofs);
                let ch = Cholesky::new(m).ok_or_else(|| {
                    Error::NotPositiveDefinite(format!("patch matrix of size {}", dofs.len()))
                })?;
                Ok((dofs, ch))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            patches,
            tau: tau.unwrap_or(1.0 / n_o as f64),
            n,
        })
    }

    pub fn n_patches(&self) -> usize {
        self.patches.len()
    }

    pub fn patch_dofs(&self, i: usize) -> &[usize] {
        &self.patches[i].0
    }

    pub fn with_damping(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }
}

impl Smoother for StarSmoother {
    fn correction(&self, r: &[f64], out: &mut [f64]) {
        debug_assert_eq!(r.len(), self.n);
        let locals: Vec<DVector<f64>> = self
            .patches
            .par_iter()
            .map(|(dofs, ch)| {
                let rhs = DVector::from_iterator(dofs.len(), dofs.iter().map(|&d| r[d]));
                ch.solve(&rhs)
            })
            .collect();
        out.iter_mut().for_each(|v| *v = 0.0);
        for ((dofs, _), x) in self.patches.iter().zip(&locals) {
            for (&d, v) in dofs.iter().zip(x.iter()) {
                out[d] += self.tau * v;
            }
        }
    }

    fn damping(&self) -> f64 {
        self.tau
    }
}

/// Damped point Jacobi with `τ = 1 / ρ(D⁻¹A)` estimated by power iteration.
pub struct JacobiSmoother {
    inv_diag: Vec<f64>,
    tau: f64,
}

impl JacobiSmoother {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let d = a.diagonal();
        if let Some(i) = d.iter().position(|&v| v == 0.0 || !v.is_finite()) {
            return Err(Error::Singular {
                row: i,
                pivot: d[i],
            });
        }
        let inv_diag: Vec<f64> = d.iter().map(|v| 1.0 / v).collect();
        let rho = spectral_radius_jacobi(a, &inv_diag, 50);
        Ok(Self {
            inv_diag,
            tau: 1.0 / rho,
        })
    }

    pub fn with_damping(a: &CsrMatrix, tau: f64) -> Result<Self> {
        let mut s = Self::new(a)?;
        s.tau = tau;
        Ok(s)
    }
}

/// Largest eigenvalue of `D⁻¹A` (similar to the SPD `D^{-1/2} A D^{-1/2}`).
fn spectral_radius_jacobi(a: &CsrMatrix, inv_diag: &[f64], iters: usize) -> f64 {
    let n = inv_diag.len();
    let sq: Vec<f64> = inv_diag.iter().map(|v| v.sqrt()).collect();
    // deterministic start with all modes present
    let mut x: Vec<f64> = (0..n)
        .map(|i| 1.0 + ((i * 7919) % 101) as f64 / 101.0)
        .collect();
    let nx = norm2(&x);
    x.iter_mut().for_each(|v| *v /= nx);
    let mut y = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut lambda = 1.0;
    for _ in 0..iters {
        for i in 0..n {
            t[i] = sq[i] * x[i];
        }
        a.spmv_into(&t, &mut y);
        for i in 0..n {
            y[i] *= sq[i];
        }
        lambda = dot(&x, &y);
        let ny = norm2(&y);
        if ny == 0.0 {
            break;
        }
        for i in 0..n {
            x[i] = y[i] / ny;
        }
    }
    lambda.max(f64::MIN_POSITIVE)
}

impl Smoother for JacobiSmoother {
    fn correction(&self, r: &[f64], out: &mut [f64]) {
        for ((o, ri), di) in out.iter_mut().zip(r).zip(&self.inv_diag) {
            *o = self.tau * ri * di;
        }
    }

    fn damping(&self) -> f64 {
        self.tau
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{
        assemble_augmented, assemble_divergence, assemble_pressure_mass, assemble_viscous_block,
    };
    use crate::elements::{
        make_pressure_space, make_velocity_space, DirichletSides, FunctionSpace,
    };
    use crate::mesh::{build_rect_mesh, vertex_stars, Rect};
    use crate::sparse_linalg::BandedCholesky;

    fn setup(n: usize, gamma: f64) -> (FunctionSpace, CsrMatrix, Vec<StarPatch>) {
        let m = build_rect_mesh(Rect::UNIT, n, n).unwrap();
        let v = make_velocity_space(&m, 2)
            .unwrap()
            .with_dirichlet(&DirichletSides::all());
        let q = make_pressure_space(&m, 2).unwrap();
        let a = assemble_viscous_block(&v, &|x: [f64; 2]| 1.0 + x[0] * x[1]).unwrap();
        let b = assemble_divergence(&v, &q).unwrap();
        let w = assemble_pressure_mass(&q, None).unwrap();
        let ag = assemble_augmented(&a, &b, &w, gamma).unwrap();
        let p = vertex_stars(&m, &v).unwrap();
        (v, ag, p)
    }

    #[test]
    fn zero_residual_leaves_iterate_unchanged() {
        let (_, a, p) = setup(2, 10.0);
        let s = StarSmoother::new(&a, &p).unwrap();
        assert_eq!(s.damping(), 0.25);
        let x0: Vec<f64> = (0..a.nrows()).map(|i| (i as f64).sin()).collect();
        let b = a.spmv(&x0).unwrap();
        let mut x = x0.clone();
        smooth(&s, &a, &mut x, &b, 3);
        for (u, v) in x.iter().zip(&x0) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn single_cell_patches_are_the_free_set() {
        let (v, _, p) = setup(1, 0.0);
        assert_eq!(v.free_dofs().len(), 2);
        for s in &p {
            assert_eq!(s.interior_velocity_dofs, v.free_dofs());
        }
    }

    #[test]
    fn one_patch_with_unit_damping_is_exact() {
        let (v, a, _) = setup(2, 100.0);
        let s = StarSmoother::from_dof_sets(&a, vec![v.free_dofs()], Some(1.0)).unwrap();
        let b: Vec<f64> = (0..a.nrows())
            .map(|i| {
                if v.is_dirichlet(i) {
                    0.0
                } else {
                    (i as f64).cos()
                }
            })
            .collect();
        let mut x = vec![0.0; a.nrows()];
        smooth(&s, &a, &mut x, &b, 1);
        let exact = BandedCholesky::factor(&a).unwrap().solve(&b);
        for (u, e) in x.iter().zip(&exact) {
            assert!((u - e).abs() < 1e-10);
        }
    }

    #[test]
    fn center_patch_matrix_matches_extraction() {
        let (_, a, p) = setup(2, 3.0);
        let s = StarSmoother::new(&a, &p).unwrap();
        let center = (0..s.n_patches())
            .find(|&i| s.patch_dofs(i).len() == 18)
            .unwrap();
        let dofs = s.patch_dofs(center).to_vec();
        let dense = a.to_dense();
        let sub = a.principal_submatrix(&dofs);
        for (i, &di) in dofs.iter().enumerate() {
            for (j, &dj) in dofs.iter().enumerate() {
                assert_eq!(sub[(i, j)], dense[(di, dj)]);
            }
        }
    }

    fn energy_error(a: &CsrMatrix, x: &[f64], exact: &[f64]) -> f64 {
        let e: Vec<f64> = x.iter().zip(exact).map(|(u, v)| u - v).collect();
        dot(&e, &a.spmv(&e).unwrap()).sqrt()
    }

    #[test]
    fn star_smoother_contracts_error_at_large_gamma() {
        let (v, a, p) = setup(4, 1000.0);
        let s = StarSmoother::new(&a, &p).unwrap();
        let b: Vec<f64> = (0..a.nrows())
            .map(|i| {
                if v.is_dirichlet(i) {
                    0.0
                } else {
                    ((i * 3) as f64).sin()
                }
            })
            .collect();
        let exact = BandedCholesky::factor(&a).unwrap().solve(&b);
        let mut x = vec![0.0; a.nrows()];
        let mut prev = energy_error(&a, &x, &exact);
        for _ in 0..5 {
            smooth(&s, &a, &mut x, &b, 1);
            let e = energy_error(&a, &x, &exact);
            assert!(e < prev);
            prev = e;
        }
    }

    #[test]
    fn jacobi_is_exact_on_diagonal_matrices() {
        let a = CsrMatrix::from_triplets(3, 3, &[(0, 0, 2.0), (1, 1, 4.0), (2, 2, 8.0)]).unwrap();
        let s = JacobiSmoother::with_damping(&a, 1.0).unwrap();
        let mut x = vec![0.0; 3];
        smooth(&s, &a, &mut x, &[2.0, 4.0, 8.0], 1);
        assert_eq!(x, vec![1.0, 1.0, 1.0]);
        let z = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0)]).unwrap();
        assert!(JacobiSmoother::new(&z).is_err());
    }

    #[test]
    fn jacobi_damping_is_stable() {
        let (v, a, _) = setup(3, 0.0);
        let s = JacobiSmoother::new(&a).unwrap();
        let b: Vec<f64> = (0..a.nrows())
            .map(|i| if v.is_dirichlet(i) { 0.0 } else { 1.0 })
            .collect();
        let exact = BandedCholesky::factor(&a).unwrap().solve(&b);
        let mut x = vec![0.0; a.nrows()];
        let e0 = energy_error(&a, &x, &exact);
        smooth(&s, &a, &mut x, &b, 20);
        assert!(energy_error(&a, &x, &exact) < e0);
    }

    #[test]
    fn damping_defaults_to_inverse_overlap() {
        let (_, a, p) = setup(3, 0.0);
        assert_eq!(StarSmoother::new(&a, &p).unwrap().damping(), 0.25);
    }
}
