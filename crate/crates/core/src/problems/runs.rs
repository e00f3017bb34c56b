//! One linear solve on a unit-square benchmark, as used by the experiment tables.

use std::f64::consts::PI;

use crate::al_precond::{solve_augmented, SchurVariant};
use crate::assembly::{assemble_stokes, ConstantViscosity, StokesAssembly, StokesBlocks, WChoice};
use crate::elements::DirichletSides;
use crate::error::{Error, Result};
use crate::mesh::{build_rect_mesh, Rect};
use crate::multigrid::{MgOptions, MultigridHierarchy};
use crate::sparse_linalg::{fgmres, BandedCholesky, FgmresOptions, Preconditioner, SolveReport};

use super::{default_sinker_count, Discretization, SinkerConfig, SinkerProblem};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnitSquareProblem {
    /// Random sinkers; `n_sinkers: None` picks the count from the coarse mesh.
    Sinker {
        dr: f64,
        n_sinkers: Option<usize>,
        seed: u64,
    },
    /// Constant viscosity with a smooth rotational body force.
    Constant { viscosity: f64 },
}

/// Approximate inverse of `A_γ` inside the solver.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InnerSolve {
    Exact,
    Multigrid(MgOptions),
}

/// Which system FGMRES is applied to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SystemKind {
    /// The augmented saddle-point system with the block preconditioner.
    Saddle(SchurVariant),
    /// Only the augmented velocity block `A_γ u = f_γ`.
    VelocityBlock,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearRun {
    pub problem: UnitSquareProblem,
    /// Cells per side of the coarsest mesh.
    pub coarse_n: usize,
    pub n_levels: usize,
    pub k: usize,
    pub gamma: f64,
    pub w_choice: WChoice,
    pub system: SystemKind,
    pub inner: InnerSolve,
    pub linear: FgmresOptions,
}

/// Assembled finest-level system of a run together with its hierarchy.
pub struct PreparedRun {
    pub blocks: StokesBlocks,
    pub disc: Discretization,
    source: Source,
}

enum Source {
    Sinker(SinkerProblem),
    Constant(f64),
}

impl LinearRun {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "gamma must be finite and >= 0, got {}",
                self.gamma
            )));
        }
        if self.n_levels == 0 || self.coarse_n == 0 {
            return Err(Error::InvalidArgument(
                "need at least one level and one cell".into(),
            ));
        }
        Ok(())
    }

    pub fn prepare(&self) -> Result<PreparedRun> {
        self.validate()?;
        match self.problem {
            UnitSquareProblem::Sinker {
                dr,
                n_sinkers,
                seed,
            } => {
                let n =
                    n_sinkers.unwrap_or_else(|| default_sinker_count(self.coarse_n, self.coarse_n));
                let p = SinkerProblem::new(
                    SinkerConfig::new(n, dr, seed)?,
                    self.coarse_n,
                    self.n_levels,
                    self.k,
                )?;
                let blocks = p.blocks(self.gamma, self.w_choice)?;
                Ok(PreparedRun {
                    blocks,
                    disc: p.disc.clone(),
                    source: Source::Sinker(p),
                })
            }
            UnitSquareProblem::Constant { viscosity } => {
                if !(viscosity > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "viscosity must be positive, got {viscosity}"
                    )));
                }
                let coarse = build_rect_mesh(Rect::UNIT, self.coarse_n, self.coarse_n)?;
                let disc = Discretization::new(
                    coarse,
                    self.n_levels,
                    self.k,
                    &DirichletSides::all(),
                    true,
                )?;
                let blocks = assemble_stokes(&StokesAssembly {
                    velocity: disc.finest_velocity(),
                    pressure: disc.finest_pressure(),
                    viscosity: &ConstantViscosity(viscosity),
                    body_force: &|x| [(PI * x[1]).sin(), (PI * x[0]).cos()],
                    boundary_values: &|_| [0.0, 0.0],
                    gamma: self.gamma,
                    w_choice: self.w_choice,
                })?;
                Ok(PreparedRun {
                    blocks,
                    disc,
                    source: Source::Constant(viscosity),
                })
            }
        }
    }

    pub fn solve(&self) -> Result<SolveReport> {
        let prepared = self.prepare()?;
        self.solve_prepared(&prepared)
    }

    pub fn solve_prepared(&self, prepared: &PreparedRun) -> Result<SolveReport> {
        let blocks = &prepared.blocks;
        let inner: Box<dyn Preconditioner> = match self.inner {
            InnerSolve::Exact => Box::new(BandedCholesky::factor(&blocks.a_gamma)?),
            InnerSolve::Multigrid(mg) => {
                let ops = match &prepared.source {
                    Source::Sinker(p) => p.level_operators(blocks)?,
                    Source::Constant(mu) => prepared
                        .disc
                        .level_operators(blocks, |_| ConstantViscosity(*mu))?,
                };
                Box::new(MultigridHierarchy::build(&ops, mg)?)
            }
        };
        match self.system {
            SystemKind::Saddle(variant) => {
                Ok(solve_augmented(blocks, variant, inner.as_ref(), self.linear)?.report)
            }
            SystemKind::VelocityBlock => {
                let rhs = blocks.augmented_rhs_u();
                let (_, report) = fgmres(&blocks.a_gamma, inner.as_ref(), &rhs, None, self.linear)?;
                Ok(report)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(system: SystemKind, inner: InnerSolve) -> LinearRun {
        LinearRun {
            problem: UnitSquareProblem::Sinker {
                dr: 1e4,
                n_sinkers: Some(2),
                seed: 3,
            },
            coarse_n: 2,
            n_levels: 2,
            k: 2,
            gamma: 10.0,
            w_choice: WChoice::Mp,
            system,
            inner,
            linear: FgmresOptions::default(),
        }
    }

    #[test]
    fn exact_velocity_solve_is_one_step() {
        let r = run(SystemKind::VelocityBlock, InnerSolve::Exact)
            .solve()
            .unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 1);
    }

    #[test]
    fn saddle_runs_converge() {
        for inner in [
            InnerSolve::Exact,
            InnerSolve::Multigrid(MgOptions::default()),
        ] {
            let r = run(SystemKind::Saddle(SchurVariant::P1), inner)
                .solve()
                .unwrap();
            assert!(r.converged, "{inner:?}: {r:?}");
        }
        let mut c = run(SystemKind::Saddle(SchurVariant::P2), InnerSolve::Exact);
        c.problem = UnitSquareProblem::Constant { viscosity: 1.0 };
        c.w_choice = WChoice::MpInvVisc;
        assert!(c.solve().unwrap().converged);
    }

    #[test]
    fn invalid_runs_are_rejected() {
        let mut r = run(SystemKind::VelocityBlock, InnerSolve::Exact);
        r.gamma = -1.0;
        assert!(r.solve().is_err());
        r.gamma = 1.0;
        r.problem = UnitSquareProblem::Constant { viscosity: 0.0 };
        assert!(r.solve().is_err());
    }
}
