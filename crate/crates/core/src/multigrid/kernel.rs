use nalgebra::DMatrix;

use crate::elements::FunctionSpace;
use crate::error::{Error, Result};
use crate::mesh::vertex_stars;
use crate::sparse_linalg::CsrMatrix;

/// Largest number of free velocity dofs handled by the dense check.
pub const KERNEL_CHECK_LIMIT: usize = 2000;

#[derive(Clone, Debug, PartialEq)]
pub struct KernelReport {
    /// Dimension of the discrete divergence-free space.
    pub kernel_dim: usize,
    /// Rank of the union of the local divergence-free subspaces.
    pub patch_rank: usize,
    pub n_patches: usize,
    pub holds: bool,
}

/// Orthonormal basis of the null space of `m` (columns), via the SVD of `m` padded to
/// at least as many rows as columns.
fn null_space(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let n = m.ncols();
    let padded = if m.nrows() < n {
        let mut p = DMatrix::zeros(n, n);
        p.view_mut((0, 0), (m.nrows(), n)).copy_from(m);
        p
    } else {
        m.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let smax = svd.singular_values.max();
    let tol = rel_tol * smax.max(f64::MIN_POSITIVE);
    let cols: Vec<usize> = (0..n)
        .filter(|&i| !(svd.singular_values[i] > tol) || smax == 0.0)
        .collect();
    let mut out = DMatrix::zeros(n, cols.len());
    for (j, &i) in cols.iter().enumerate() {
        out.set_column(j, &v_t.row(i).transpose());
    }
    out
}

fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    if m.ncols() == 0 || m.nrows() == 0 {
        return 0;
    }
    let sv = m.singular_values();
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// Checks that the discrete divergence-free space is the sum of its intersections with the
/// vertex-star subspaces.
pub fn kernel_decomposition_check(v: &FunctionSpace, b: &CsrMatrix) -> Result<KernelReport> {
    let tol = 1e-8;
    let free = v.free_dofs();
    if free.len() > KERNEL_CHECK_LIMIT {
        return Err(Error::TooLarge {
            size: free.len(),
            limit: KERNEL_CHECK_LIMIT,
        });
    }
    if b.ncols() != v.n_dofs() {
        return Err(Error::DimensionMismatch {
            expected: v.n_dofs(),
            got: b.ncols(),
        });
    }
    let mut pos = vec![usize::MAX; v.n_dofs()];
    for (i, &d) in free.iter().enumerate() {
        pos[d] = i;
    }
    let all_rows: Vec<usize> = (0..b.nrows()).collect();
    let bf = b.submatrix(&all_rows, &free);
    let kernel_dim = free.len() - rank(&bf, tol);

    let patches = vertex_stars(v.mesh(), v)?;
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for p in &patches {
        let dofs = &p.interior_velocity_dofs;
        if dofs.is_empty() {
            continue;
        }
        let bp = b.submatrix(&all_rows, dofs);
        let rows: Vec<usize> = (0..bp.nrows())
            .filter(|&i| bp.row(i).iter().any(|x| *x != 0.0))
            .collect();
        let local = DMatrix::from_fn(rows.len(), dofs.len(), |i, j| bp[(rows[i], j)]);
        let ns = null_space(&local, tol);
        for c in 0..ns.ncols() {
            let mut g = vec![0.0; free.len()];
            for (j, &d) in dofs.iter().enumerate() {
                g[pos[d]] = ns[(j, c)];
            }
            basis.push(g);
        }
    }
    let stacked = DMatrix::from_fn(free.len(), basis.len(), |i, j| basis[j][i]);
    let patch_rank = rank(&stacked, tol);
    Ok(KernelReport {
        kernel_dim,
        patch_rank,
        n_patches: patches.len(),
        holds: patch_rank == kernel_dim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble_divergence;
    use crate::elements::{make_pressure_space, make_velocity_space, DirichletSides};
    use crate::mesh::{build_rect_mesh, Rect};

    #[test]
    fn null_space_of_small_matrix() {
        let m = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        let ns = null_space(&m, 1e-12);
        assert_eq!(ns.ncols(), 2);
        assert!((&m * &ns).norm() < 1e-14);
        assert!((ns.transpose() * &ns - DMatrix::identity(2, 2)).norm() < 1e-14);
    }

    #[test]
    fn rank_counts_independent_columns() {
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 0.0, 1.0, 1.0]);
        assert_eq!(rank(&m, 1e-10), 2);
        assert_eq!(rank(&DMatrix::zeros(2, 2), 1e-10), 0);
    }

    #[test]
    fn decomposition_on_single_vertex_mesh() {
        let m = build_rect_mesh(Rect::UNIT, 2, 2).unwrap();
        let v = make_velocity_space(&m, 2)
            .unwrap()
            .with_dirichlet(&DirichletSides::all());
        let q = make_pressure_space(&m, 2).unwrap();
        let b = assemble_divergence(&v, &q).unwrap();
        let r = kernel_decomposition_check(&v, &b).unwrap();
        assert!(r.holds, "{r:?}");
        assert!(r.kernel_dim > 0);
    }

    #[test]
    fn decomposition_on_three_by_three_mesh() {
        let m = build_rect_mesh(Rect::UNIT, 3, 3).unwrap();
        for k in [2, 3] {
            let v = make_velocity_space(&m, k)
                .unwrap()
                .with_dirichlet(&DirichletSides::all());
            let q = make_pressure_space(&m, k).unwrap();
            let b = assemble_divergence(&v, &q).unwrap();
            let r = kernel_decomposition_check(&v, &b).unwrap();
            assert!(r.holds, "k = {k}: {r:?}");
        }
    }

    #[test]
    fn too_large_is_rejected() {
        let m = build_rect_mesh(Rect::UNIT, 24, 24).unwrap();
        let v = make_velocity_space(&m, 2)
            .unwrap()
            .with_dirichlet(&DirichletSides::all());
        let q = make_pressure_space(&m, 2).unwrap();
        let b = assemble_divergence(&v, &q).unwrap();
        assert!(matches!(
            kernel_decomposition_check(&v, &b),
            Err(Error::TooLarge { .. })
        ));
    }
}
