use std::str::FromStr;

use crate::assembly::{
    assemble_augmented, assemble_divergence, assemble_pressure_mass, assemble_viscous_block,
    BlockDiag, StokesBlocks, ViscosityModel, WChoice,
};
use crate::elements::FunctionSpace;
use crate::error::{Error, Result};
use crate::mesh::vertex_stars;
use crate::sparse_linalg::{BandedCholesky, CsrMatrix, Preconditioner};

use super::smoothers::{smooth, JacobiSmoother, Smoother, StarSmoother};
use super::transfer::{Augmentation, Transfer};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SmootherKind {
    Star,
    Jacobi,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransferKind {
    Robust,
    Standard,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CycleKind {
    V,
    F,
}

impl FromStr for SmootherKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "star" => Ok(Self::Star),
            "jacobi" => Ok(Self::Jacobi),
            o => Err(Error::InvalidArgument(format!("unknown smoother '{o}'"))),
        }
    }
}

impl FromStr for TransferKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "robust" => Ok(Self::Robust),
            "standard" => Ok(Self::Standard),
            o => Err(Error::InvalidArgument(format!("unknown transfer '{o}'"))),
        }
    }
}

impl FromStr for CycleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "v" => Ok(Self::V),
            "f" => Ok(Self::F),
            o => Err(Error::InvalidArgument(format!("unknown cycle '{o}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MgOptions {
    pub smoother: SmootherKind,
    pub transfer: TransferKind,
    pub cycle: CycleKind,
    pub pre_smooth: usize,
    pub post_smooth: usize,
}

impl Default for MgOptions {
    fn default() -> Self {
        Self {
            smoother: SmootherKind::Star,
            transfer: TransferKind::Robust,
            cycle: CycleKind::F,
            pre_smooth: 5,
            post_smooth: 5,
        }
    }
}

impl MgOptions {
    /// Point Jacobi with plain interpolation.
    pub fn jacobi() -> Self {
        Self {
            smoother: SmootherKind::Jacobi,
            transfer: TransferKind::Standard,
            ..Self::default()
        }
    }
}

/// Discrete operators of one multigrid level.
#[derive(Clone, Debug)]
pub struct LevelOperators {
    pub velocity: FunctionSpace,
    pub a_gamma: CsrMatrix,
    pub b: CsrMatrix,
    pub w: BlockDiag,
    pub gamma: f64,
}

impl LevelOperators {
    pub fn from_blocks(velocity: &FunctionSpace, blocks: &StokesBlocks) -> Self {
        Self {
            velocity: velocity.clone(),
            a_gamma: blocks.a_gamma.clone(),
            b: blocks.b.clone(),
            w: blocks.w().clone(),
            gamma: blocks.gamma,
        }
    }

    fn augmentation(&self) -> Augmentation {
        Augmentation {
            b: self.b.clone(),
            w: self.w.clone(),
            gamma: self.gamma,
        }
    }
}

/// Rediscretizes `A_γ`, `B` and `W` on the mesh of `velocity`.
pub fn assemble_level(
    velocity: &FunctionSpace,
    pressure: &FunctionSpace,
    viscosity: &dyn ViscosityModel,
    gamma: f64,
    w_choice: WChoice,
) -> Result<LevelOperators> {
    let a = assemble_viscous_block(velocity, viscosity)?;
    let b = assemble_divergence(velocity, pressure)?;
    let w = match w_choice {
        WChoice::Mp => assemble_pressure_mass(pressure, None)?,
        WChoice::MpInvVisc => assemble_pressure_mass(pressure, Some(viscosity))?,
    };
    let a_gamma = assemble_augmented(&a, &b, &w, gamma)?;
    Ok(LevelOperators {
        velocity: velocity.clone(),
        a_gamma,
        b,
        w,
        gamma,
    })
}

struct Level {
    a: CsrMatrix,
    smoother: Box<dyn Smoother>,
}

/// Geometric multigrid for `A_γ`, used as the inner solver of the block preconditioner.
/// One application is one cycle from a zero initial guess.
pub struct MultigridHierarchy {
    levels: Vec<Level>,
    /// `transfers[l]` maps level `l` to level `l + 1`.
    transfers: Vec<Transfer>,
    coarse: BandedCholesky,
    dirichlet: Vec<bool>,
    opts: MgOptions,
}

impl MultigridHierarchy {
    /// `ops` is ordered from coarsest to finest.
    pub fn build(ops: &[LevelOperators], opts: MgOptions) -> Result<Self> {
        let Some(finest) = ops.last() else {
            return Err(Error::InvalidArgument("empty level list".into()));
        };
        let coarse = BandedCholesky::factor(&ops[0].a_gamma)?;
        let mut levels = Vec::with_capacity(ops.len());
        for op in ops {
            let smoother: Box<dyn Smoother> = match opts.smoother {
                SmootherKind::Star => {
                    let patches = vertex_stars(op.velocity.mesh(), &op.velocity)?;
                    Box::new(StarSmoother::new(&op.a_gamma, &patches)?)
                }
                SmootherKind::Jacobi => Box::new(JacobiSmoother::new(&op.a_gamma)?),
            };
            levels.push(Level {
                a: op.a_gamma.clone(),
                smoother,
            });
        }
        let transfers = ops
            .windows(2)
            .map(|w| match opts.transfer {
                TransferKind::Standard => Transfer::standard(&w[0].velocity, &w[1].velocity),
                TransferKind::Robust => Transfer::robust(
                    &w[0].velocity,
                    &w[1].velocity,
                    &w[1].a_gamma,
                    w[1].augmentation(),
                ),
            })
            .collect::<Result<Vec<_>>>()?;
        let dirichlet = finest.velocity.dirichlet_mask().to_vec();
        Ok(Self {
            levels,
            transfers,
            coarse,
            dirichlet,
            opts,
        })
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn options(&self) -> &MgOptions {
        &self.opts
    }

    pub fn level_sizes(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.a.nrows()).collect()
    }

    /// One cycle for `A_γ x = b` starting from `x = 0`.
    pub fn cycle(&self, b: &[f64]) -> Vec<f64> {
        let top = self.levels.len() - 1;
        let mut x = vec![0.0; b.len()];
        self.cycle_level(top, b, &mut x, self.opts.cycle);
        for (i, &d) in self.dirichlet.iter().enumerate() {
            if d {
                x[i] = b[i];
            }
        }
        x
    }

    fn cycle_level(&self, l: usize, b: &[f64], x: &mut [f64], kind: CycleKind) {
        if l == 0 {
            x.copy_from_slice(&self.coarse.solve(b));
            return;
        }
        let lev = &self.levels[l];
        smooth(lev.smoother.as_ref(), &lev.a, x, b, self.opts.pre_smooth);
        let mut r = vec![0.0; b.len()];
        lev.a.spmv_into(x, &mut r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        let t = &self.transfers[l - 1];
        let mut rc = vec![0.0; t.n_coarse()];
        t.restrict(&r, &mut rc);
        let mut ec = vec![0.0; rc.len()];
        match kind {
            CycleKind::V => self.cycle_level(l - 1, &rc, &mut ec, CycleKind::V),
            CycleKind::F => {
                self.cycle_level(l - 1, &rc, &mut ec, CycleKind::F);
                self.cycle_level(l - 1, &rc, &mut ec, CycleKind::V);
            }
        }
        let mut ef = vec![0.0; b.len()];
        t.prolong(&ec, &mut ef);
        for (xi, ei) in x.iter_mut().zip(&ef) {
            *xi += ei;
        }
        smooth(lev.smoother.as_ref(), &lev.a, x, b, self.opts.post_smooth);
    }
}

impl Preconditioner for MultigridHierarchy {
    fn precondition(&self, r: &[f64], z: &mut [f64]) -> Result<()> {
        if r.len() != self.dirichlet.len() {
            return Err(Error::DimensionMismatch {
                expected: self.dirichlet.len(),
                got: r.len(),
            });
        }
        z.copy_from_slice(&self.cycle(r));
        Ok(())
    }
}
