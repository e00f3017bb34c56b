use std::time::Instant;

use crate::al_precond::{solve_augmented, SchurVariant};
use crate::assembly::{
    assemble_divergence, assemble_pressure_mass, assemble_stokes, assemble_viscous_block,
    eval_velocity, quadrature_strains, viscous_quadrature_degree, StokesAssembly, StokesBlocks,
    ViscosityModel, WChoice,
};
use crate::elements::{make_velocity_space, quadrature, DirichletSides, FunctionSpace};
use crate::error::{Error, Result};
use crate::mesh::{build_rect_mesh, Mesh, Rect};
use crate::multigrid::{LevelOperators, MgOptions, MultigridHierarchy};
use crate::sparse_linalg::{norm2, CsrMatrix, FgmresOptions, SolveReport};

use super::Discretization;

const SECONDS_PER_YEAR: f64 = 365.25 * 24.0 * 3600.0;

/// Two-layer compression problem on the `x–z` cross-section `[0, L] × [0, H]`: a viscoplastic
/// lower layer with a weak notch on the bottom, under an isoviscous upper layer. All values
/// are nondimensional unless noted.
#[derive(Clone, Debug, PartialEq)]
pub struct ViscoplasticConfig {
    pub length: f64,
    pub height: f64,
    /// Interface between the lower and upper layer.
    pub layer_top: f64,
    pub notch: Rect,
    /// Reference viscosity `η_r` of the lower layer.
    pub eta_r: f64,
    /// Yield stress `τ_y`.
    pub tau_y: f64,
    pub mu_upper: f64,
    pub mu_notch: f64,
    /// Inflow speed; the side boundaries move with `u₀(1 + z)`.
    pub u0: f64,
    /// Lower bound for the strain-rate invariant in denominators.
    pub strain_floor: f64,
    /// Replace the composite law by its zero-strain limit `2η_r`.
    pub linear: bool,
    /// Length scale (m).
    pub h0: f64,
    /// Velocity scale (m/s).
    pub u_scale: f64,
    /// Viscosity scale (Pa s).
    pub eta0: f64,
    pub coarse_nx: usize,
    pub coarse_ny: usize,
    pub n_levels: usize,
    pub k: usize,
}

impl Default for ViscoplasticConfig {
    fn default() -> Self {
        let h0 = 30e3;
        let u_scale = 2.5e-3 / SECONDS_PER_YEAR;
        let eta0 = 1e21;
        Self {
            length: 4.0,
            height: 1.0,
            layer_top: 0.75,
            notch: Rect::new(1.875, 2.125, 0.0, 0.125),
            eta_r: 1e24 / eta0,
            tau_y: 1e8 * h0 / (eta0 * u_scale),
            mu_upper: 1e21 / eta0,
            mu_notch: 1e17 / eta0,
            u0: 1.0,
            strain_floor: 1e-12,
            linear: false,
            h0,
            u_scale,
            eta0,
            coarse_nx: 32,
            coarse_ny: 8,
            n_levels: 3,
            k: 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Lower,
    Upper,
    Notch,
}

impl ViscoplasticConfig {
    /// Stress unit `η₀ U₀ / H₀` in Pa.
    pub fn stress_scale(&self) -> f64 {
        self.eta0 * self.u_scale / self.h0
    }

    pub fn with_yield_stress_pa(mut self, pa: f64) -> Self {
        self.tau_y = pa / self.stress_scale();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.length,
            self.height,
            self.eta_r,
            self.tau_y,
            self.mu_upper,
            self.mu_notch,
            self.strain_floor,
            self.h0,
            self.u_scale,
            self.eta0,
        ];
        if positive.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "viscoplastic parameters must be positive".into(),
            ));
        }
        if !(self.layer_top > 0.0 && self.layer_top < self.height) {
            return Err(Error::InvalidArgument(
                "layer interface outside the domain".into(),
            ));
        }
        if self.coarse_nx == 0 || self.coarse_ny == 0 || self.n_levels == 0 {
            return Err(Error::InvalidArgument("empty mesh".into()));
        }
        Ok(())
    }

    pub fn region(&self, x: [f64; 2]) -> Region {
        let n = &self.notch;
        if x[0] > n.x0 && x[0] < n.x1 && x[1] > n.y0 && x[1] < n.y1 {
            Region::Notch
        } else if x[1] < self.layer_top {
            Region::Lower
        } else {
            Region::Upper
        }
    }

    /// Viscosity in `region` for strain-rate invariant `ii`.
    pub fn viscosity(&self, region: Region, ii: f64) -> f64 {
        match region {
            Region::Lower if self.linear => 2.0 * self.eta_r,
            Region::Lower => effective_viscosity(self.eta_r, self.tau_y, ii.max(self.strain_floor)),
            Region::Upper => self.mu_upper,
            Region::Notch => self.mu_notch,
        }
    }

    fn yields(&self, region: Region) -> bool {
        region == Region::Lower && !self.linear
    }
}

/// Composite law `2η_r τ_y / (2η_r II + τ_y)`.
pub fn effective_viscosity(eta_r: f64, tau_y: f64, ii: f64) -> f64 {
    2.0 * eta_r * tau_y / (2.0 * eta_r * ii + tau_y)
}

fn invariant(e: &[f64; 3]) -> f64 {
    (0.5 * (e[0] * e[0] + e[1] * e[1] + e[2] * e[2])).sqrt()
}

/// Linearized constitutive tensor `2μ [I − (e ⊗ t)_sym / (2 II_e max(τ_y, II_t))]` in Mandel
/// form, for strain `e` and stress `t`.
pub fn bracket_tensor(mu: f64, e: [f64; 3], t: [f64; 3], tau_y: f64, floor: f64) -> [[f64; 3]; 3] {
    let ii = invariant(&e).max(floor);
    let c = 1.0 / (2.0 * ii * tau_y.max(invariant(&t)));
    let mut d = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let id = if i == j { 1.0 } else { 0.0 };
            d[i][j] = 2.0 * mu * (id - 0.5 * c * (t[i] * e[j] + e[i] * t[j]));
        }
    }
    d
}

/// Iterate of the Newton loop. `tau` holds the stress at every viscous quadrature point of
/// the finest mesh, indexed `cell * n_q + q`.
#[derive(Clone, Debug)]
pub struct NewtonState {
    pub u: Vec<f64>,
    pub p: Vec<f64>,
    pub tau: Vec<[f64; 3]>,
    /// Residual norm relative to the reference residual.
    pub residual: f64,
}

/// Viscosity and linearized tensor at the finest-level quadrature points.
struct QuadFields {
    mu: Vec<f64>,
    d: Vec<[[f64; 3]; 3]>,
    n_q: usize,
    ref_points: Vec<[f64; 2]>,
}

impl QuadFields {
    fn nearest(&self, cell: usize, xi: [f64; 2]) -> usize {
        let q = (0..self.n_q)
            .min_by(|&a, &b| {
                let da = (self.ref_points[a][0] - xi[0]).powi(2)
                    + (self.ref_points[a][1] - xi[1]).powi(2);
                let db = (self.ref_points[b][0] - xi[0]).powi(2)
                    + (self.ref_points[b][1] - xi[1]).powi(2);
                da.total_cmp(&db)
            })
            .unwrap_or(0);
        cell * self.n_q + q
    }
}

struct FineModel<'a> {
    f: &'a QuadFields,
    tensor: bool,
}

impl ViscosityModel for FineModel<'_> {
    fn viscosity(&self, cell: usize, qp: usize, _x: [f64; 2]) -> f64 {
        self.f.mu[cell * self.f.n_q + qp]
    }

    fn tensor(&self, cell: usize, qp: usize, _x: [f64; 2]) -> Option<[[f64; 3]; 3]> {
        self.tensor.then(|| self.f.d[cell * self.f.n_q + qp])
    }
}

/// Coarse-level model reading the finest-level field at the nearest quadrature point.
struct SampledModel<'a> {
    f: &'a QuadFields,
    fine: &'a Mesh,
}

impl SampledModel<'_> {
    fn index(&self, x: [f64; 2]) -> usize {
        let (c, xi) = self
            .fine
            .locate(x)
            .expect("quadrature point inside the domain");
        self.f.nearest(c, xi)
    }
}

impl ViscosityModel for SampledModel<'_> {
    fn viscosity(&self, _cell: usize, _qp: usize, x: [f64; 2]) -> f64 {
        self.f.mu[self.index(x)]
    }

    fn tensor(&self, _cell: usize, _qp: usize, x: [f64; 2]) -> Option<[[f64; 3]; 3]> {
        Some(self.f.d[self.index(x)])
    }
}

/// Discretized viscoplastic problem.
pub struct ViscoplasticProblem {
    pub config: ViscoplasticConfig,
    pub disc: Discretization,
    /// Finest velocity space without boundary conditions, for residual evaluation.
    unconstrained: FunctionSpace,
    b_full: CsrMatrix,
    regions: Vec<Region>,
    ref_points: Vec<[f64; 2]>,
    reference_residual: f64,
}

impl ViscoplasticProblem {
    pub fn new(config: ViscoplasticConfig) -> Result<Self> {
        config.validate()?;
        let domain = Rect::new(0.0, config.length, 0.0, config.height);
        let coarse = build_rect_mesh(domain, config.coarse_nx, config.coarse_ny)?;
        let disc = Discretization::new(coarse, config.n_levels, config.k, &Self::sides(), false)?;
        let unconstrained = make_velocity_space(disc.finest_velocity().mesh(), config.k)?
            .with_dirichlet(&DirichletSides::none());
        let b_full = assemble_divergence(&unconstrained, disc.finest_pressure())?;
        let rule = quadrature(viscous_quadrature_degree(config.k));
        let (_, points) = quadrature_strains(&unconstrained, &vec![0.0; unconstrained.n_dofs()]);
        let regions = points.iter().map(|&x| config.region(x)).collect();
        let mut p = Self {
            config,
            disc,
            unconstrained,
            b_full,
            regions,
            ref_points: rule.points.clone(),
            reference_residual: 1.0,
        };
        let lift = p.lift();
        let (ru, rp) = p.residual(&lift, &vec![0.0; p.disc.finest_pressure().n_dofs()])?;
        p.reference_residual = norm2(&ru).hypot(norm2(&rp)).max(f64::MIN_POSITIVE);
        Ok(p)
    }

    /// Normal velocity on the sides and bottom; the top and all tangential components are free.
    pub fn sides() -> DirichletSides {
        DirichletSides {
            left: [true, false],
            right: [true, false],
            bottom: [false, true],
            top: [false, false],
        }
    }

    pub fn boundary_values(&self, x: [f64; 2]) -> [f64; 2] {
        let s = self.config.u0 * (1.0 + x[1]);
        if x[0] < 0.5 * self.config.length {
            [s, 0.0]
        } else {
            [-s, 0.0]
        }
    }

    fn lift(&self) -> Vec<f64> {
        let v = self.disc.finest_velocity();
        let g = v.interpolate(|x| self.boundary_values(x));
        g.iter()
            .enumerate()
            .map(|(i, &x)| if v.is_dirichlet(i) { x } else { 0.0 })
            .collect()
    }

    pub fn velocity(&self) -> &FunctionSpace {
        self.disc.finest_velocity()
    }

    pub fn pressure(&self) -> &FunctionSpace {
        self.disc.finest_pressure()
    }

    pub fn reference_residual(&self) -> f64 {
        self.reference_residual
    }

    /// Stress `μ(II) ε̇(u)` at the quadrature points, scaled back to `II_τ ≤ τ_y` where needed.
    pub fn consistent_stress(&self, u: &[f64]) -> Vec<[f64; 3]> {
        let (strains, _) = quadrature_strains(&self.unconstrained, u);
        strains
            .iter()
            .zip(&self.regions)
            .map(|(e, &r)| {
                let mu = self.config.viscosity(r, invariant(e));
                let mut t = e.map(|v| mu * v);
                let it = invariant(&t);
                if self.config.yields(r) && it > self.config.tau_y {
                    t = t.map(|v| v * self.config.tau_y / it);
                }
                t
            })
            .collect()
    }

    /// Linearized stress after a step `α du` from `u`:
    /// `t = μ ε̇(u) + ½ 𝔻 ε̇(α du)`, scaled back to `II_t ≤ τ_y` in the yielding layer.
    fn stress_update(&self, f: &QuadFields, u: &[f64], du: &[f64], alpha: f64) -> Vec<[f64; 3]> {
        let (e0, _) = quadrature_strains(&self.unconstrained, u);
        let (de, _) = quadrature_strains(&self.unconstrained, du);
        e0.iter()
            .zip(&de)
            .enumerate()
            .map(|(i, (e, d))| {
                let (mu, dd) = (f.mu[i], &f.d[i]);
                let mut t = [0.0; 3];
                for a in 0..3 {
                    t[a] = mu * e[a]
                        + 0.5 * alpha * (dd[a][0] * d[0] + dd[a][1] * d[1] + dd[a][2] * d[2]);
                }
                let it = invariant(&t);
                if self.config.yields(self.regions[i]) && it > self.config.tau_y {
                    t = t.map(|v| v * self.config.tau_y / it);
                }
                t
            })
            .collect()
    }

    fn fields(&self, u: &[f64], tau: &[[f64; 3]]) -> Result<QuadFields> {
        let (strains, _) = quadrature_strains(&self.unconstrained, u);
        if tau.len() != strains.len() {
            return Err(Error::DimensionMismatch {
                expected: strains.len(),
                got: tau.len(),
            });
        }
        let mut mu = Vec::with_capacity(strains.len());
        let mut d = Vec::with_capacity(strains.len());
        for ((e, t), &r) in strains.iter().zip(tau).zip(&self.regions) {
            if e.iter().chain(t).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("Newton state".into()));
            }
            let m = self.config.viscosity(r, invariant(e));
            mu.push(m);
            d.push(if self.config.yields(r) {
                bracket_tensor(m, *e, *t, self.config.tau_y, self.config.strain_floor)
            } else {
                let s = 2.0 * m;
                [[s, 0.0, 0.0], [0.0, s, 0.0], [0.0, 0.0, s]]
            });
        }
        Ok(QuadFields {
            mu,
            d,
            n_q: self.ref_points.len(),
            ref_points: self.ref_points.clone(),
        })
    }

    /// Nonlinear residual `(A(u)u + Bᵀp, Bu)`, with Dirichlet rows set to zero.
    pub fn residual(&self, u: &[f64], p: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let (strains, _) = quadrature_strains(&self.unconstrained, u);
        let mu: Vec<f64> = strains
            .iter()
            .zip(&self.regions)
            .map(|(e, &r)| self.config.viscosity(r, invariant(e)))
            .collect();
        let f = QuadFields {
            mu,
            d: Vec::new(),
            n_q: self.ref_points.len(),
            ref_points: Vec::new(),
        };
        let a = assemble_viscous_block(
            &self.unconstrained,
            &FineModel {
                f: &f,
                tensor: false,
            },
        )?;
        let mut ru = a.spmv(u)?;
        let mut bt = vec![0.0; u.len()];
        self.b_full.spmv_transpose_into(p, &mut bt);
        let v = self.velocity();
        for (i, (r, b)) in ru.iter_mut().zip(&bt).enumerate() {
            *r = if v.is_dirichlet(i) { 0.0 } else { *r + b };
        }
        let rp = self.b_full.spmv(u)?;
        Ok((ru, rp))
    }

    fn relative_residual(&self, u: &[f64], p: &[f64]) -> Result<f64> {
        let (ru, rp) = self.residual(u, p)?;
        Ok(norm2(&ru).hypot(norm2(&rp)) / self.reference_residual)
    }

    /// Newton system for the increment at `state`.
    pub fn newton_blocks(
        &self,
        state: &NewtonState,
        gamma: f64,
        w_choice: WChoice,
    ) -> Result<StokesBlocks> {
        let f = self.fields(&state.u, &state.tau)?;
        self.blocks_from_fields(&f, state, gamma, w_choice)
    }

    fn blocks_from_fields(
        &self,
        f: &QuadFields,
        state: &NewtonState,
        gamma: f64,
        w_choice: WChoice,
    ) -> Result<StokesBlocks> {
        let (v, q) = (self.velocity(), self.pressure());
        let a = assemble_viscous_block(v, &FineModel { f, tensor: true })?;
        let b = assemble_divergence(v, q)?;
        let mp = assemble_pressure_mass(q, None)?;
        let mp_invvisc = assemble_pressure_mass(q, Some(&FineModel { f, tensor: false }))?;
        let (ru, rp) = self.residual(&state.u, &state.p)?;
        let rhs_u = ru.iter().map(|r| -r).collect();
        let rhs_p = rp.iter().map(|r| -r).collect();
        let lift = vec![0.0; v.n_dofs()];
        StokesBlocks::from_parts(
            a,
            b,
            mp,
            mp_invvisc,
            rhs_u,
            rhs_p,
            lift,
            v.dirichlet_mask().to_vec(),
            q,
            gamma,
            w_choice,
        )
    }

    fn level_operators(
        &self,
        f: &QuadFields,
        finest: &StokesBlocks,
    ) -> Result<Vec<LevelOperators>> {
        let fine = self.velocity().mesh();
        self.disc
            .level_operators(finest, |_| SampledModel { f, fine })
    }

    /// Solves the linear problem with the lower layer at its zero-strain viscosity `2η_r`.
    pub fn picard_initial(&self, opts: &NewtonOptions) -> Result<(NewtonState, SolveReport)> {
        let cfg = &self.config;
        let visc = |x: [f64; 2]| match cfg.region(x) {
            Region::Lower => 2.0 * cfg.eta_r,
            Region::Upper => cfg.mu_upper,
            Region::Notch => cfg.mu_notch,
        };
        let zero = |_: [f64; 2]| [0.0, 0.0];
        let bv = |x: [f64; 2]| self.boundary_values(x);
        let w = opts.w();
        let blocks = assemble_stokes(&StokesAssembly {
            velocity: self.velocity(),
            pressure: self.pressure(),
            viscosity: &visc,
            body_force: &zero,
            boundary_values: &bv,
            gamma: opts.gamma,
            w_choice: w,
        })?;
        let ops = self.disc.level_operators(&blocks, |_| visc)?;
        let mg = MultigridHierarchy::build(&ops, opts.mg)?;
        let sol = solve_augmented(&blocks, opts.variant, &mg, opts.linear)?;
        let tau = self.consistent_stress(&sol.u);
        let residual = self.relative_residual(&sol.u, &sol.p)?;
        Ok((
            NewtonState {
                u: sol.u,
                p: sol.p,
                tau,
                residual,
            },
            sol.report,
        ))
    }

    /// Cell-center samples `(x, z, μ_eff, II, u_x, u_z, p)` on the finest mesh.
    pub fn field_samples(&self, state: &NewtonState) -> Vec<[f64; 7]> {
        let (v, q) = (self.velocity(), self.pressure());
        let mesh = v.mesh();
        let (psi, _) = q.element().eval([0.0, 0.0]);
        (0..mesh.n_cells())
            .map(|c| {
                let x = mesh.cell_map(c).map([0.0, 0.0]);
                let (w, e) = eval_velocity(v, c, [0.0, 0.0], &state.u);
                let ii = invariant(&e);
                let mu = self.config.viscosity(self.config.region(x), ii);
                let p: f64 = q
                    .cell_dofs(c)
                    .iter()
                    .zip(&psi)
                    .map(|(&d, s)| state.p[d] * s)
                    .sum();
                [x[0], x[1], mu, ii, w[0], w[1], p]
            })
            .collect()
    }
}

/// How the stress entering the linearization is updated between steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StressUpdate {
    /// Independent stress, advanced with the linearized constitutive law.
    StressVelocity,
    /// Stress recomputed from the new velocity, which gives the standard Newton method.
    Standard,
}

#[derive(Clone, Debug)]
pub struct NewtonOptions {
    pub stress_update: StressUpdate,
    pub gamma: f64,
    pub variant: SchurVariant,
    /// Augmentation weight; `None` picks the one matching the variant.
    pub w_choice: Option<WChoice>,
    pub mg: MgOptions,
    pub linear: FgmresOptions,
    pub tol: f64,
    pub max_steps: usize,
    pub max_halvings: usize,
    /// End the loop at the first linear solve that misses its tolerance.
    pub stop_on_linear_failure: bool,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            stress_update: StressUpdate::StressVelocity,
            gamma: 10.0,
            variant: SchurVariant::P2,
            w_choice: None,
            mg: MgOptions::default(),
            linear: FgmresOptions::default(),
            tol: 1e-8,
            max_steps: 15,
            max_halvings: 8,
            stop_on_linear_failure: false,
        }
    }
}

impl NewtonOptions {
    pub fn w(&self) -> WChoice {
        self.w_choice.unwrap_or_else(|| self.variant.default_w())
    }
}

#[derive(Clone, Debug)]
pub struct NewtonStep {
    pub step: usize,
    pub linear_iterations: usize,
    pub linear_converged: bool,
    /// Relative nonlinear residual after the step.
    pub residual: f64,
    pub step_length: f64,
    pub wall_time: f64,
}

#[derive(Clone, Debug)]
pub struct NewtonResult {
    pub state: NewtonState,
    pub initial: SolveReport,
    pub initial_residual: f64,
    pub steps: Vec<NewtonStep>,
    pub converged: bool,
}

impl NewtonResult {
    pub fn any_linear_failure(&self) -> bool {
        !self.initial.converged || self.steps.iter().any(|s| !s.linear_converged)
    }

    pub fn max_linear_iterations(&self) -> usize {
        self.steps
            .iter()
            .map(|s| s.linear_iterations)
            .max()
            .unwrap_or(0)
    }

    pub fn mean_linear_iterations(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps
            .iter()
            .map(|s| s.linear_iterations as f64)
            .sum::<f64>()
            / self.steps.len() as f64
    }
}

/// Damped Newton iteration with backtracking on the residual norm, starting from the
/// Picard solution. Failure to converge is reported, not raised.
pub fn newton_solve(problem: &ViscoplasticProblem, opts: &NewtonOptions) -> Result<NewtonResult> {
    let (mut state, initial) = problem.picard_initial(opts)?;
    let initial_residual = state.residual;
    let mut steps = Vec::new();
    let mut converged = state.residual <= opts.tol;
    let w = opts.w();
    while !converged && steps.len() < opts.max_steps {
        let start = Instant::now();
        let f = problem.fields(&state.u, &state.tau)?;
        let blocks = problem.blocks_from_fields(&f, &state, opts.gamma, w)?;
        let ops = problem.level_operators(&f, &blocks)?;
        let mg = MultigridHierarchy::build(&ops, opts.mg)?;
        let sol = solve_augmented(&blocks, opts.variant, &mg, opts.linear)?;
        let linear_converged = sol.report.converged;
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let u: Vec<f64> = state
                .u
                .iter()
                .zip(&sol.u)
                .map(|(a, d)| a + alpha * d)
                .collect();
            let p: Vec<f64> = state
                .p
                .iter()
                .zip(&sol.p)
                .map(|(a, d)| a + alpha * d)
                .collect();
            let r = problem.relative_residual(&u, &p)?;
            if r < state.residual {
                accepted = Some((u, p, r));
                break;
            }
            alpha *= 0.5;
        }
        let step_length = if accepted.is_some() { alpha } else { 0.0 };
        if let Some((u, p, r)) = accepted {
            let du: Vec<f64> = sol
                .u
                .iter()
                .zip(problem.velocity().dirichlet_mask())
                .map(|(d, &m)| if m { 0.0 } else { *d })
                .collect();
            let tau = match opts.stress_update {
                StressUpdate::StressVelocity => problem.stress_update(&f, &state.u, &du, alpha),
                StressUpdate::Standard => problem.consistent_stress(&u),
            };
            state = NewtonState {
                u,
                p,
                tau,
                residual: r,
            };
        }
        steps.push(NewtonStep {
            step: steps.len() + 1,
            linear_iterations: sol.report.iterations,
            linear_converged,
            residual: state.residual,
            step_length,
            wall_time: start.elapsed().as_secs_f64(),
        });
        converged = state.residual <= opts.tol;
        if step_length == 0.0 || (!linear_converged && opts.stop_on_linear_failure) {
            break;
        }
    }
    Ok(NewtonResult {
        state,
        initial,
        initial_residual,
        steps,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse_linalg::dot;

    fn small(linear: bool) -> ViscoplasticConfig {
        ViscoplasticConfig {
            coarse_nx: 8,
            coarse_ny: 2,
            n_levels: 2,
            linear,
            ..Default::default()
        }
    }

    #[test]
    fn composite_law_limits() {
        let (eta, ty) = (1e3, 38.0);
        assert_eq!(effective_viscosity(eta, ty, 0.0), 2.0 * eta);
        assert!((effective_viscosity(eta, ty, ty / (2.0 * eta)) - eta).abs() < 1e-9);
        let big = 1e9;
        assert!((effective_viscosity(eta, ty, big) * big / ty - 1.0).abs() < 1e-6);
        let mut prev = f64::INFINITY;
        for i in 0..50 {
            let m = effective_viscosity(eta, ty, 1e-4 * 1.5f64.powi(i));
            assert!(m < prev);
            prev = m;
        }
    }

    #[test]
    fn default_scaling() {
        let c = ViscoplasticConfig::default();
        assert!((c.eta_r - 1e3).abs() < 1e-9 && (c.mu_notch - 1e-4).abs() < 1e-18);
        assert!((c.tau_y * c.stress_scale() - 1e8).abs() < 1e-3);
        assert!((c.tau_y - 37.87).abs() < 0.01);
        assert_eq!(c.region([2.0, 0.05]), Region::Notch);
        assert_eq!(c.region([1.0, 0.5]), Region::Lower);
        assert_eq!(c.region([1.0, 0.8]), Region::Upper);
    }

    #[test]
    fn bracket_is_symmetric_and_matches_standard_newton() {
        let e = [0.3, -0.1, 0.25];
        let (eta, ty) = (1e3, 38.0);
        let ii = invariant(&e);
        let mu = effective_viscosity(eta, ty, ii);
        let t = e.map(|v| mu * v);
        let d = bracket_tensor(mu, e, t, ty, 1e-12);
        for i in 0..3 {
            for j in 0..3 {
                assert!((d[i][j] - d[j][i]).abs() < 1e-12 * d[0][0].abs());
            }
        }
        // derivative of 2μ(II(e)) e by central differences
        let sigma = |e: [f64; 3]| e.map(|v| 2.0 * effective_viscosity(eta, ty, invariant(&e)) * v);
        let h = 1e-7;
        for j in 0..3 {
            let (mut ep, mut em) = (e, e);
            ep[j] += h;
            em[j] -= h;
            let (sp, sm) = (sigma(ep), sigma(em));
            for i in 0..3 {
                let fd = (sp[i] - sm[i]) / (2.0 * h);
                assert!(
                    (fd - d[i][j]).abs() < 1e-5 * mu,
                    "{i}{j}: {fd} vs {}",
                    d[i][j]
                );
            }
        }
        let d0 = bracket_tensor(mu, e, [0.0; 3], ty, 1e-12);
        assert_eq!(d0[0][0], 2.0 * mu);
        assert_eq!(d0[0][1], 0.0);
    }

    #[test]
    fn newton_operator_is_the_residual_derivative() {
        let p = ViscoplasticProblem::new(small(false)).unwrap();
        let (state, _) = p.picard_initial(&NewtonOptions::default()).unwrap();
        let v = p.velocity();
        let dir: Vec<f64> = (0..v.n_dofs())
            .map(|i| {
                if v.is_dirichlet(i) {
                    0.0
                } else {
                    ((i * 13) % 7) as f64 / 7.0 - 0.5
                }
            })
            .collect();
        let blocks = p.newton_blocks(&state, 0.0, WChoice::Mp).unwrap();
        let mut jv = vec![0.0; v.n_dofs()];
        blocks.a.spmv_into(&dir, &mut jv);
        let (r0, _) = p.residual(&state.u, &state.p).unwrap();
        let scale = norm2(&jv);
        let mut errs = Vec::new();
        for eps in [1e-4, 5e-5] {
            let u: Vec<f64> = state.u.iter().zip(&dir).map(|(a, d)| a + eps * d).collect();
            let (r1, _) = p.residual(&u, &state.p).unwrap();
            let diff: Vec<f64> = (0..r0.len())
                .filter(|&i| !v.is_dirichlet(i))
                .map(|i| (r1[i] - r0[i]) / eps - jv[i])
                .collect();
            errs.push(norm2(&diff) / scale);
        }
        assert!(errs[0] < 1e-3, "{errs:?}");
        // first-order remainder of the difference quotient halves with eps
        assert!(errs[1] < 0.6 * errs[0], "{errs:?}");
        let mut a_dir = vec![0.0; dir.len()];
        blocks.a.spmv_into(&dir, &mut a_dir);
        assert!(dot(&dir, &a_dir) > 0.0);
    }

    #[test]
    fn linear_rheology_converges_in_one_step() {
        let p = ViscoplasticProblem::new(small(true)).unwrap();
        let opts = NewtonOptions {
            linear: FgmresOptions {
                tol: 1e-10,
                ..Default::default()
            },
            ..Default::default()
        };
        let r = newton_solve(&p, &opts).unwrap();
        assert!(r.converged);
        assert!(r.steps.len() <= 1, "{:?}", r.steps);
    }

    #[test]
    fn consistent_stress_respects_yield_bound() {
        let p = ViscoplasticProblem::new(small(false)).unwrap();
        let u: Vec<f64> = (0..p.velocity().n_dofs())
            .map(|i| (i as f64 * 0.37).sin() * 50.0)
            .collect();
        for (t, &r) in p.consistent_stress(&u).iter().zip(&p.regions) {
            if r == Region::Lower {
                assert!(invariant(t) <= p.config.tau_y * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn field_samples_cover_the_mesh() {
        let p = ViscoplasticProblem::new(small(false)).unwrap();
        let (s, _) = p.picard_initial(&NewtonOptions::default()).unwrap();
        let rows = p.field_samples(&s);
        assert_eq!(rows.len(), p.velocity().mesh().n_cells());
        assert!(rows.iter().all(|r| r.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn nan_state_is_rejected() {
        let p = ViscoplasticProblem::new(small(false)).unwrap();
        let mut u = p.lift();
        u[10] = f64::NAN;
        let tau = vec![[0.0; 3]; p.regions.len()];
        let s = NewtonState {
            u,
            p: vec![0.0; p.pressure().n_dofs()],
            tau,
            residual: 1.0,
        };
        assert!(matches!(
            p.newton_blocks(&s, 0.0, WChoice::Mp),
            Err(Error::NonFinite(_))
        ));
    }
}
