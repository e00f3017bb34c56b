//! Benchmark problems and the level hierarchy they are discretized on.

mod runs;
mod sinker;
mod viscoplastic;

pub use runs::{InnerSolve, LinearRun, PreparedRun, SystemKind, UnitSquareProblem};

pub use sinker::{
    default_sinker_count, place_sinkers, sinker_chi, sinker_rhs, sinker_viscosity, SinkerConfig,
    SinkerProblem,
};
pub use viscoplastic::{
    bracket_tensor, effective_viscosity, newton_solve, NewtonOptions, NewtonResult, NewtonState,
    NewtonStep, Region, StressUpdate, ViscoplasticConfig, ViscoplasticProblem,
};

use crate::assembly::{StokesBlocks, ViscosityModel};
use crate::elements::{make_pressure_space, make_velocity_space, DirichletSides, FunctionSpace};
use crate::error::Result;
use crate::mesh::{Mesh, MeshHierarchy};
use crate::multigrid::{assemble_level, LevelOperators};

/// Velocity and pressure spaces on every level of a uniformly refined hierarchy.
#[derive(Clone, Debug)]
pub struct Discretization {
    pub meshes: MeshHierarchy,
    pub velocity: Vec<FunctionSpace>,
    pub pressure: Vec<FunctionSpace>,
}

impl Discretization {
    pub fn new(
        coarse: Mesh,
        n_levels: usize,
        k: usize,
        sides: &DirichletSides,
        mean_constraint: bool,
    ) -> Result<Self> {
        let meshes = MeshHierarchy::new(coarse, n_levels)?;
        let mut velocity = Vec::with_capacity(n_levels);
        let mut pressure = Vec::with_capacity(n_levels);
        for m in &meshes.levels {
            velocity.push(make_velocity_space(m, k)?.with_dirichlet(sides));
            pressure.push(make_pressure_space(m, k)?.with_mean_constraint(mean_constraint));
        }
        Ok(Self {
            meshes,
            velocity,
            pressure,
        })
    }

    pub fn n_levels(&self) -> usize {
        self.velocity.len()
    }

    pub fn finest_velocity(&self) -> &FunctionSpace {
        self.velocity.last().expect("at least one level")
    }

    pub fn finest_pressure(&self) -> &FunctionSpace {
        self.pressure.last().expect("at least one level")
    }

    /// Multigrid operators, coarsest first. The finest level reuses `finest`; coarser levels
    /// are rediscretized with `viscosity(level)` and the same `γ` and `W`.
    pub fn level_operators<V: ViscosityModel>(
        &self,
        finest: &StokesBlocks,
        viscosity: impl Fn(usize) -> V,
    ) -> Result<Vec<LevelOperators>> {
        let top = self.n_levels() - 1;
        let mut ops = Vec::with_capacity(top + 1);
        for l in 0..top {
            let visc = viscosity(l);
            ops.push(assemble_level(
                &self.velocity[l],
                &self.pressure[l],
                &visc,
                finest.gamma,
                finest.w_choice,
            )?);
        }
        ops.push(LevelOperators::from_blocks(&self.velocity[top], finest));
        Ok(ops)
    }
}
