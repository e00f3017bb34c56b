//! Block preconditioner for the augmented saddle-point system
//! `[[A_γ, Bᵀ], [B, 0]]` with mass-matrix based Schur complement approximations.

use std::time::Instant;

use crate::assembly::{BlockDiag, StokesBlocks, WChoice};
use crate::error::{Error, Result};
use crate::sparse_linalg::{
    fgmres, CompensatedVec, CsrMatrix, DenseMatrix, FgmresOptions, LinearOperator, Preconditioner,
    SolveReport,
};

/// Approximation of the inverse Schur complement of the augmented system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SchurVariant {
    /// `Ŝ⁻¹ = M_p(1/μ)⁻¹ + γ M_p⁻¹`
    P1,
    /// `Ŝ⁻¹ = (1 + γ) M_p(1/μ)⁻¹`
    P2,
    /// `Ŝ⁻¹ = M_p(1/μ)⁻¹`, ignoring the augmentation.
    Baseline,
}

impl SchurVariant {
    pub fn name(&self) -> &'static str {
        match self {
            SchurVariant::P1 => "P1",
            SchurVariant::P2 => "P2",
            SchurVariant::Baseline => "baseline",
        }
    }

    /// Augmentation weight matching the variant: `M_p` for P1, `M_p(1/μ)` for P2.
    pub fn default_w(&self) -> WChoice {
        match self {
            SchurVariant::P2 => WChoice::MpInvVisc,
            SchurVariant::P1 | SchurVariant::Baseline => WChoice::Mp,
        }
    }
}

impl std::str::FromStr for SchurVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "p1" => Ok(Self::P1),
            "p2" => Ok(Self::P2),
            "baseline" | "gamma-zero" => Ok(Self::Baseline),
            other => Err(Error::InvalidArgument(format!(
                "unknown preconditioner variant '{other}'"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SchurApprox {
    pub variant: SchurVariant,
    pub gamma: f64,
    mp: BlockDiag,
    mp_invvisc: BlockDiag,
    /// Extra factor on `Ŝ⁻¹`; 1 except for negative-control experiments.
    pub scale: f64,
}

impl SchurApprox {
    pub fn new(variant: SchurVariant, gamma: f64, mp: &BlockDiag, mp_invvisc: &BlockDiag) -> Self {
        Self {
            variant,
            gamma,
            mp: mp.clone(),
            mp_invvisc: mp_invvisc.clone(),
            scale: 1.0,
        }
    }

    pub fn from_blocks(variant: SchurVariant, blocks: &StokesBlocks) -> Self {
        Self::new(variant, blocks.gamma, &blocks.mp, &blocks.mp_invvisc)
    }

    pub fn n(&self) -> usize {
        self.mp.n()
    }

    /// `out = Ŝ⁻¹ q`.
    pub fn apply_schur_inverse(&self, q: &[f64], out: &mut [f64]) {
        self.mp_invvisc.apply_inverse(q, out);
        let s = self.scale;
        match self.variant {
            SchurVariant::P1 => {
                let mut t = vec![0.0; q.len()];
                self.mp.apply_inverse(q, &mut t);
                for (o, ti) in out.iter_mut().zip(&t) {
                    *o = s * (*o + self.gamma * ti);
                }
            }
            SchurVariant::P2 => out.iter_mut().for_each(|o| *o *= s * (1.0 + self.gamma)),
            SchurVariant::Baseline => out.iter_mut().for_each(|o| *o *= s),
        }
    }

    /// Dense `Ŝ⁻¹`.
    pub fn dense_inverse(&self) -> DenseMatrix {
        let mi = self.mp_invvisc.inverse_to_dense();
        let out = match self.variant {
            SchurVariant::P1 => mi + self.mp.inverse_to_dense() * self.gamma,
            SchurVariant::P2 => mi * (1.0 + self.gamma),
            SchurVariant::Baseline => mi,
        };
        out * self.scale
    }
}

/// `[[A, Bᵀ], [B, 0]]` acting on `(u, p)` stacked into one vector.
pub struct SaddleOperator<'a> {
    pub a: &'a CsrMatrix,
    pub b: &'a CsrMatrix,
}

impl LinearOperator for SaddleOperator<'_> {
    fn dim(&self) -> usize {
        self.a.nrows() + self.b.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let nu = self.a.nrows();
        let (xu, xp) = x.split_at(nu);
        let (yu, yp) = y.split_at_mut(nu);
        self.a.spmv_into(xu, yu);
        let mut t = vec![0.0; nu];
        self.b.spmv_transpose_into(xp, &mut t);
        for (a, b) in yu.iter_mut().zip(&t) {
            *a += b;
        }
        self.b.spmv_into(xu, yp);
    }

    fn residual(&self, rhs: &[f64], x: &[f64], r: &mut [f64]) {
        let nu = self.a.nrows();
        let (xu, xp) = x.split_at(nu);
        let (fu, fp) = rhs.split_at(nu);
        let (ru, rp) = r.split_at_mut(nu);
        let mut acc = CompensatedVec::new(fu);
        self.a.sub_spmv_compensated(xu, &mut acc);
        self.b.sub_spmv_transpose_compensated(xp, &mut acc);
        acc.finish(ru);
        let mut acc = CompensatedVec::new(fp);
        self.b.sub_spmv_compensated(xu, &mut acc);
        acc.finish(rp);
    }
}

/// Factored block preconditioner: lower sweep, `diag(Â⁻¹, -Ŝ⁻¹)`, upper sweep.
/// `Â⁻¹` is applied twice per application.
pub struct BlockPreconditioner<'a> {
    pub schur: SchurApprox,
    pub inner: &'a dyn Preconditioner,
    pub b: &'a CsrMatrix,
    project: Option<(&'a [f64], &'a [f64], f64)>,
}

impl<'a> BlockPreconditioner<'a> {
    pub fn new(
        schur: SchurApprox,
        inner: &'a dyn Preconditioner,
        blocks: &'a StokesBlocks,
    ) -> Self {
        let project = blocks.mean_constraint.then(|| {
            let area: f64 = blocks
                .constant_pressure
                .iter()
                .zip(&blocks.pressure_integrals)
                .map(|(c, w)| c * w)
                .sum();
            (
                blocks.constant_pressure.as_slice(),
                blocks.pressure_integrals.as_slice(),
                area,
            )
        });
        Self {
            schur,
            inner,
            b: &blocks.b,
            project,
        }
    }

    /// Applies the preconditioner to `(r_u, r_p)`.
    pub fn apply_block(
        &self,
        r_u: &[f64],
        r_p: &[f64],
        z_u: &mut [f64],
        z_p: &mut [f64],
    ) -> Result<()> {
        let nu = r_u.len();
        let mut w = vec![0.0; nu];
        self.inner.precondition(r_u, &mut w)?;
        let mut y = vec![0.0; r_p.len()];
        self.b.spmv_into(&w, &mut y);
        for (yi, ri) in y.iter_mut().zip(r_p) {
            *yi = ri - *yi;
        }
        self.schur.apply_schur_inverse(&y, z_p);
        z_p.iter_mut().for_each(|v| *v = -*v);
        if let Some((c, ints, area)) = self.project {
            let m: f64 = ints.iter().zip(z_p.iter()).map(|(w, v)| w * v).sum::<f64>() / area;
            for (zi, ci) in z_p.iter_mut().zip(c) {
                *zi -= m * ci;
            }
        }
        let mut t = vec![0.0; nu];
        self.b.spmv_transpose_into(z_p, &mut t);
        let mut corr = vec![0.0; nu];
        self.inner.precondition(&t, &mut corr)?;
        for ((zu, wi), ci) in z_u.iter_mut().zip(&w).zip(&corr) {
            *zu = wi - ci;
        }
        Ok(())
    }
}

impl Preconditioner for BlockPreconditioner<'_> {
    fn precondition(&self, r: &[f64], z: &mut [f64]) -> Result<()> {
        let nu = self.b.ncols();
        let (ru, rp) = r.split_at(nu);
        let (zu, zp) = z.split_at_mut(nu);
        self.apply_block(ru, rp, zu, zp)
    }
}

/// Velocity (with boundary data added back), pressure and solver report.
#[derive(Clone, Debug)]
pub struct StokesSolution {
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub report: SolveReport,
}

/// Solves the augmented system with FGMRES preconditioned by the block preconditioner.
pub fn solve_augmented(
    blocks: &StokesBlocks,
    variant: SchurVariant,
    inner: &dyn Preconditioner,
    opts: FgmresOptions,
) -> Result<StokesSolution> {
    let start = Instant::now();
    let nu = blocks.n_u();
    let op = SaddleOperator {
        a: &blocks.a_gamma,
        b: &blocks.b,
    };
    let pc = BlockPreconditioner::new(SchurApprox::from_blocks(variant, blocks), inner, blocks);
    let mut rhs = blocks.augmented_rhs_u();
    rhs.extend_from_slice(&blocks.rhs_p);
    let (x, mut report) = fgmres(&op, &pc, &rhs, None, opts)?;
    let mut u = x[..nu].to_vec();
    for (ui, li) in u.iter_mut().zip(&blocks.lift) {
        *ui += li;
    }
    let mut p = x[nu..].to_vec();
    blocks.project_pressure(&mut p);
    report.wall_time = start.elapsed().as_secs_f64();
    Ok(StokesSolution { u, p, report })
}
