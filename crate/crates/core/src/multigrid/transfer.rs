use nalgebra::{Cholesky, DVector, Dyn};
use rayon::prelude::*;

use crate::assembly::BlockDiag;
use crate::elements::{FunctionSpace, Lagrange1d};
use crate::error::{Error, Result};
use crate::sparse_linalg::CsrMatrix;

/// Nodal interpolation of coarse `[Q_k]²` fields onto the refined mesh. Rows of fine
/// Dirichlet dofs and columns of coarse Dirichlet dofs are zero.
pub fn standard_prolongation(coarse: &FunctionSpace, fine: &FunctionSpace) -> Result<CsrMatrix> {
    let k = coarse.degree();
    if fine.degree() != k || !coarse.is_velocity() || !fine.is_velocity() {
        return Err(Error::InvalidArgument(
            "prolongation needs velocity spaces of one degree".into(),
        ));
    }
    let (cm, fm) = (coarse.mesh(), fine.mesh());
    if fm.nx() != 2 * cm.nx() || fm.ny() != 2 * cm.ny() {
        return Err(Error::InvalidArgument(
            "fine mesh is not the refinement of the coarse one".into(),
        ));
    }
    let basis = Lagrange1d::new(k);
    let (cnx, _) = coarse.node_grid();
    let (fnx, fny) = fine.node_grid();
    // fine node line l lies in coarse cell i at reference coordinate s/k - 1, s = l - 2k i
    let weights_1d = |l: usize, ncells: usize| -> (usize, Vec<f64>) {
        let i = (l / (2 * k)).min(ncells - 1);
        let s = l - 2 * k * i;
        let xi = s as f64 / k as f64 - 1.0;
        (i, basis.eval(xi).0)
    };
    let mut trip = Vec::new();
    for jf in 0..fny {
        let (jc, wy) = weights_1d(jf, cm.ny());
        for if_ in 0..fnx {
            let (ic, wx) = weights_1d(if_, cm.nx());
            let fnode = jf * fnx + if_;
            for (b, &wyb) in wy.iter().enumerate() {
                if wyb == 0.0 {
                    continue;
                }
                for (a, &wxa) in wx.iter().enumerate() {
                    let w = wxa * wyb;
                    if w == 0.0 {
                        continue;
                    }
                    let cnode = (k * jc + b) * cnx + k * ic + a;
                    for comp in 0..2 {
                        let (fd, cd) = (2 * fnode + comp, 2 * cnode + comp);
                        if !fine.is_dirichlet(fd) && !coarse.is_dirichlet(cd) {
                            trip.push((fd, cd, w));
                        }
                    }
                }
            }
        }
    }
    CsrMatrix::from_triplets(fine.n_dofs(), coarse.n_dofs(), &trip)
}

/// Fine velocity dofs strictly inside each coarse cell.
pub fn coarse_cell_interiors(coarse: &FunctionSpace, fine: &FunctionSpace) -> Vec<Vec<usize>> {
    let k = coarse.degree();
    let cm = coarse.mesh();
    let (fnx, _) = fine.node_grid();
    (0..cm.n_cells())
        .map(|c| {
            let (i, j) = cm.cell_ij(c);
            let mut dofs = Vec::with_capacity(2 * (2 * k - 1) * (2 * k - 1));
            for b in 1..2 * k {
                for a in 1..2 * k {
                    let node = (2 * k * j + b) * fnx + 2 * k * i + a;
                    for comp in 0..2 {
                        let d = 2 * node + comp;
                        if !fine.is_dirichlet(d) {
                            dofs.push(d);
                        }
                    }
                }
            }
            dofs
        })
        .collect()
}

/// Applies `γ BᵀW⁻¹B` on the fine level.
#[derive(Clone, Debug)]
pub struct Augmentation {
    pub b: CsrMatrix,
    pub w: BlockDiag,
    pub gamma: f64,
}

impl Augmentation {
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let np = self.b.nrows();
        let mut t = vec![0.0; np];
        let mut s = vec![0.0; np];
        self.b.spmv_into(x, &mut t);
        self.w.apply_inverse(&t, &mut s);
        self.b.spmv_transpose_into(&s, y);
        y.iter_mut().for_each(|v| *v *= self.gamma);
    }
}

/// Coarse-to-fine transfer, optionally with the local divergence correction
/// `P̃u = Pu − ũ`, where on every coarse cell `A_γ[I, I] ũ_I = (γ BᵀW⁻¹B P u)_I`.
pub struct Transfer {
    p: CsrMatrix,
    pt: CsrMatrix,
    robust: Option<RobustCorrection>,
}

struct RobustCorrection {
    aug: Augmentation,
    cells: Vec<(Vec<usize>, Cholesky<f64, Dyn>)>,
}

impl RobustCorrection {
    /// `Σ_c E_c A_c⁻¹ E_cᵀ x`
    fn local_solves(&self, x: &[f64], out: &mut [f64]) {
        let locals: Vec<DVector<f64>> = self
            .cells
            .par_iter()
            .map(|(dofs, ch)| {
                ch.solve(&DVector::from_iterator(
                    dofs.len(),
                    dofs.iter().map(|&d| x[d]),
                ))
            })
            .collect();
        out.iter_mut().for_each(|v| *v = 0.0);
        for ((dofs, _), v) in self.cells.iter().zip(&locals) {
            for (&d, val) in dofs.iter().zip(v.iter()) {
                out[d] = *val;
            }
        }
    }
}

impl Transfer {
    pub fn standard(coarse: &FunctionSpace, fine: &FunctionSpace) -> Result<Self> {
        let p = standard_prolongation(coarse, fine)?;
        let pt = p.transpose();
        Ok(Self {
            p,
            pt,
            robust: None,
        })
    }

    /// Robust transfer for the fine-level operator `a_gamma = A + γ BᵀW⁻¹B`.
    pub fn robust(
        coarse: &FunctionSpace,
        fine: &FunctionSpace,
        a_gamma: &CsrMatrix,
        aug: Augmentation,
    ) -> Result<Self> {
        let mut t = Self::standard(coarse, fine)?;
        if aug.gamma == 0.0 {
            return Ok(t);
        }
        let cells = coarse_cell_interiors(coarse, fine)
            .into_par_iter()
            .filter(|d| !d.is_empty())
            .map(|dofs| {
                let ch = Cholesky::new(a_gamma.principal_submatrix(&dofs))
                    .ok_or_else(|| Error::NotPositiveDefinite("local transfer matrix".into()))?;
                Ok((dofs, ch))
            })
            .collect::<Result<Vec<_>>>()?;
        t.robust = Some(RobustCorrection { aug, cells });
        Ok(t)
    }

    pub fn is_robust(&self) -> bool {
        self.robust.is_some()
    }

    pub fn n_fine(&self) -> usize {
        self.p.nrows()
    }

    pub fn n_coarse(&self) -> usize {
        self.p.ncols()
    }

    pub fn standard_matrix(&self) -> &CsrMatrix {
        &self.p
    }

    pub fn prolong(&self, uc: &[f64], uf: &mut [f64]) {
        self.p.spmv_into(uc, uf);
        if let Some(r) = &self.robust {
            let n = uf.len();
            let mut g = vec![0.0; n];
            r.aug.apply(uf, &mut g);
            let mut corr = vec![0.0; n];
            r.local_solves(&g, &mut corr);
            for (u, c) in uf.iter_mut().zip(&corr) {
                *u -= c;
            }
        }
    }

    pub fn restrict(&self, rf: &[f64], rc: &mut [f64]) {
        match &self.robust {
            None => self.pt.spmv_into(rf, rc),
            Some(r) => {
                let n = rf.len();
                let mut s = vec![0.0; n];
                r.local_solves(rf, &mut s);
                let mut g = vec![0.0; n];
                r.aug.apply(&s, &mut g);
                let adj: Vec<f64> = rf.iter().zip(&g).map(|(a, b)| a - b).collect();
                self.pt.spmv_into(&adj, rc);
            }
        }
    }
}
