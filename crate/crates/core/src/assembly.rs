//! Assembly of the Stokes blocks: viscous operator `A`, divergence `B`, the pressure
//! mass matrices `M_p` and `M_p(1/μ)`, the augmented block `A_γ = A + γ BᵀW⁻¹B` and
//! load vectors.
//!
//! Dirichlet dofs keep their place in the numbering: their rows and columns of `A`
//! become identity rows and columns, their columns of `B` are zero, and the boundary
//! data is lifted into the right-hand side. Solutions are therefore homogeneous on
//! Dirichlet dofs and `lift` must be added back.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;

use crate::elements::{quadrature, FunctionSpace, QuadratureRule, Tabulation};
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::sparse_linalg::{spd_inverse, CsrMatrix, DenseMatrix};

const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Quadrature degree for terms carrying the viscosity (and load vectors).
pub fn viscous_quadrature_degree(k: usize) -> usize {
    2 * k + 2
}

/// Quadrature degree for unweighted pressure mass and divergence.
pub fn mass_quadrature_degree(k: usize) -> usize {
    2 * k
}

/// Viscosity sampled at quadrature points. `qp` indexes the rule of degree
/// [`viscous_quadrature_degree`] on the cell.
pub trait ViscosityModel: Sync {
    fn viscosity(&self, cell: usize, qp: usize, x: [f64; 2]) -> f64;

    /// Full constitutive tensor `𝔻` in Mandel notation, `e = (ε_xx, ε_yy, √2 ε_xy)`, so that
    /// the viscous integrand is `e(v)ᵀ 𝔻 e(u)`. `None` means `𝔻 = 2μ I`.
    fn tensor(&self, _cell: usize, _qp: usize, _x: [f64; 2]) -> Option<[[f64; 3]; 3]> {
        None
    }
}

impl<F: Fn([f64; 2]) -> f64 + Sync> ViscosityModel for F {
    fn viscosity(&self, _cell: usize, _qp: usize, x: [f64; 2]) -> f64 {
        self(x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstantViscosity(pub f64);

impl ViscosityModel for ConstantViscosity {
    fn viscosity(&self, _cell: usize, _qp: usize, _x: [f64; 2]) -> f64 {
        self.0
    }
}

/// Weight matrix used in the augmentation term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WChoice {
    Mp,
    MpInvVisc,
}

/// Block-diagonal SPD matrix with one dense block per cell, inverses precomputed.
#[derive(Clone, Debug)]
pub struct BlockDiag {
    bs: usize,
    blocks: Vec<DenseMatrix>,
    inverses: Vec<DenseMatrix>,
}

impl BlockDiag {
    pub fn new(blocks: Vec<DenseMatrix>) -> Result<Self> {
        let bs = blocks.first().map_or(0, |b| b.nrows());
        if blocks.iter().any(|b| b.nrows() != bs || b.ncols() != bs) {
            return Err(Error::InvalidArgument(
                "blocks must share one square size".into(),
            ));
        }
        let inverses = blocks.iter().map(spd_inverse).collect::<Result<Vec<_>>>()?;
        Ok(Self {
            bs,
            blocks,
            inverses,
        })
    }

    pub fn n(&self) -> usize {
        self.bs * self.blocks.len()
    }

    pub fn block_size(&self) -> usize {
        self.bs
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn block(&self, c: usize) -> &DenseMatrix {
        &self.blocks[c]
    }

    pub fn inverse_block(&self, c: usize) -> &DenseMatrix {
        &self.inverses[c]
    }

    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        Self::apply_blocks(&self.blocks, self.bs, x, y);
    }

    pub fn apply_inverse(&self, x: &[f64], y: &mut [f64]) {
        Self::apply_blocks(&self.inverses, self.bs, x, y);
    }

    fn apply_blocks(blocks: &[DenseMatrix], bs: usize, x: &[f64], y: &mut [f64]) {
        for (c, m) in blocks.iter().enumerate() {
            let o = c * bs;
            for i in 0..bs {
                let mut s = 0.0;
                for j in 0..bs {
                    s += m[(i, j)] * x[o + j];
                }
                y[o + i] = s;
            }
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        Self::dense_of(&self.blocks, self.bs)
    }

    pub fn inverse_to_dense(&self) -> DenseMatrix {
        Self::dense_of(&self.inverses, self.bs)
    }

    fn dense_of(blocks: &[DenseMatrix], bs: usize) -> DenseMatrix {
        let n = bs * blocks.len();
        let mut d = DenseMatrix::zeros(n, n);
        for (c, m) in blocks.iter().enumerate() {
            d.view_mut((c * bs, c * bs), (bs, bs)).copy_from(m);
        }
        d
    }

    pub fn to_csr(&self) -> CsrMatrix {
        let mut trip = Vec::with_capacity(self.bs * self.bs * self.blocks.len());
        for (c, m) in self.blocks.iter().enumerate() {
            let o = c * self.bs;
            for i in 0..self.bs {
                for j in 0..self.bs {
                    trip.push((o + i, o + j, m[(i, j)]));
                }
            }
        }
        CsrMatrix::from_triplets(self.n(), self.n(), &trip).expect("indices in range")
    }
}

/// Per-cell geometry at the points of one quadrature rule.
struct CellQuad {
    points: Vec<[f64; 2]>,
    jxw: Vec<f64>,
    jit: [[f64; 2]; 2],
}

fn cell_quad(mesh: &Mesh, c: usize, rule: &QuadratureRule) -> CellQuad {
    let m = mesh.cell_map(c);
    let det = m.det();
    CellQuad {
        points: rule.points.iter().map(|&p| m.map(p)).collect(),
        jxw: rule.weights.iter().map(|w| w * det).collect(),
        jit: m.inverse_transpose(),
    }
}

fn physical_grad(jit: &[[f64; 2]; 2], g: [f64; 2]) -> [f64; 2] {
    [
        jit[0][0] * g[0] + jit[0][1] * g[1],
        jit[1][0] * g[0] + jit[1][1] * g[1],
    ]
}

/// Mandel strain vectors of all local velocity basis functions (local dof `2l + comp`).
fn strain_vectors(tab: &Tabulation, q: usize, jit: &[[f64; 2]; 2]) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(2 * tab.grads[q].len());
    for &g in &tab.grads[q] {
        let [gx, gy] = physical_grad(jit, g);
        out.push([gx, 0.0, SQRT_HALF * gy]);
        out.push([0.0, gy, SQRT_HALF * gx]);
    }
    out
}

/// Mandel strain of the field with local coefficients `u` at quadrature point `q`.
fn strain_at(tab: &Tabulation, q: usize, jit: &[[f64; 2]; 2], u: &[f64]) -> [f64; 3] {
    let mut du = [[0.0; 2]; 2];
    for (l, &g) in tab.grads[q].iter().enumerate() {
        let pg = physical_grad(jit, g);
        for comp in 0..2 {
            du[comp][0] += u[2 * l + comp] * pg[0];
            du[comp][1] += u[2 * l + comp] * pg[1];
        }
    }
    [du[0][0], du[1][1], SQRT_HALF * (du[0][1] + du[1][0])]
}

/// Mandel strain of the velocity `u` at every point of the viscous quadrature rule,
/// indexed `cell * n_q + q`, together with the physical points.
pub fn quadrature_strains(v: &FunctionSpace, u: &[f64]) -> (Vec<[f64; 3]>, Vec<[f64; 2]>) {
    let mesh = v.mesh();
    let rule = quadrature(viscous_quadrature_degree(v.degree()));
    let tab = v.element().tabulate(&rule);
    let per_cell: Vec<(Vec<[f64; 3]>, Vec<[f64; 2]>)> = (0..mesh.n_cells())
        .into_par_iter()
        .map(|c| {
            let cq = cell_quad(mesh, c, &rule);
            let local: Vec<f64> = v.cell_dofs(c).iter().map(|&d| u[d]).collect();
            let e = (0..rule.len())
                .map(|q| strain_at(&tab, q, &cq.jit, &local))
                .collect();
            (e, cq.points)
        })
        .collect();
    let mut strains = Vec::with_capacity(mesh.n_cells() * rule.len());
    let mut points = Vec::with_capacity(mesh.n_cells() * rule.len());
    for (e, x) in per_cell {
        strains.extend(e);
        points.extend(x);
    }
    (strains, points)
}

/// Velocity and Mandel strain of `u` at reference point `xi` of cell `c`.
pub fn eval_velocity(v: &FunctionSpace, c: usize, xi: [f64; 2], u: &[f64]) -> ([f64; 2], [f64; 3]) {
    let (vals, grads) = v.element().eval(xi);
    let jit = v.mesh().cell_map(c).inverse_transpose();
    let tab = Tabulation {
        values: vec![vals.clone()],
        grads: vec![grads],
    };
    let local: Vec<f64> = v.cell_dofs(c).iter().map(|&d| u[d]).collect();
    let mut w = [0.0; 2];
    for (l, phi) in vals.iter().enumerate() {
        w[0] += local[2 * l] * phi;
        w[1] += local[2 * l + 1] * phi;
    }
    (w, strain_at(&tab, 0, &jit, &local))
}

/// Local viscous matrices, one per cell, in local dof order.
fn viscous_locals(v: &FunctionSpace, visc: &dyn ViscosityModel) -> Result<Vec<DenseMatrix>> {
    let mesh = v.mesh();
    let rule = quadrature(viscous_quadrature_degree(v.degree()));
    let tab = v.element().tabulate(&rule);
    let nd = v.dofs_per_cell();
    (0..mesh.n_cells())
        .into_par_iter()
        .map(|c| {
            let cq = cell_quad(mesh, c, &rule);
            let mut local = DenseMatrix::zeros(nd, nd);
            for q in 0..rule.len() {
                let x = cq.points[q];
                let d = match visc.tensor(c, q, x) {
                    Some(d) => d,
                    None => {
                        let mu = visc.viscosity(c, q, x);
                        if !(mu > 0.0) || !mu.is_finite() {
                            return Err(Error::Assembly(format!(
                                "viscosity {mu} at cell {c}, point {x:?}"
                            )));
                        }
                        let t = 2.0 * mu;
                        [[t, 0.0, 0.0], [0.0, t, 0.0], [0.0, 0.0, t]]
                    }
                };
                if d.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::Assembly(format!("non-finite tensor at cell {c}")));
                }
                let e = strain_vectors(&tab, q, &cq.jit);
                let w = cq.jxw[q];
                for j in 0..nd {
                    let de = [
                        d[0][0] * e[j][0] + d[0][1] * e[j][1] + d[0][2] * e[j][2],
                        d[1][0] * e[j][0] + d[1][1] * e[j][1] + d[1][2] * e[j][2],
                        d[2][0] * e[j][0] + d[2][1] * e[j][1] + d[2][2] * e[j][2],
                    ];
                    for i in 0..nd {
                        local[(i, j)] += w * (e[i][0] * de[0] + e[i][1] * de[1] + e[i][2] * de[2]);
                    }
                }
            }
            Ok(local)
        })
        .collect()
}

fn scatter(v: &FunctionSpace, locals: &[DenseMatrix]) -> CsrMatrix {
    let nd = v.dofs_per_cell();
    let mut trip = Vec::with_capacity(locals.len() * nd * nd);
    for (c, m) in locals.iter().enumerate() {
        let dofs = v.cell_dofs(c);
        for j in 0..nd {
            for i in 0..nd {
                trip.push((dofs[i], dofs[j], m[(i, j)]));
            }
        }
    }
    CsrMatrix::from_triplets(v.n_dofs(), v.n_dofs(), &trip).expect("dofs in range")
}

/// Replaces rows and columns of masked dofs with those of the identity.
pub fn constrain_symmetric(a: &CsrMatrix, mask: &[bool]) -> CsrMatrix {
    let mut trip: Vec<_> = a
        .triplets()
        .into_iter()
        .filter(|&(i, j, _)| !mask[i] && !mask[j])
        .collect();
    trip.extend((0..a.nrows()).filter(|&i| mask[i]).map(|i| (i, i, 1.0)));
    CsrMatrix::from_triplets(a.nrows(), a.ncols(), &trip).expect("indices in range")
}

/// Drops the columns of masked dofs.
pub fn constrain_columns(b: &CsrMatrix, mask: &[bool]) -> CsrMatrix {
    let trip: Vec<_> = b
        .triplets()
        .into_iter()
        .filter(|&(_, j, _)| !mask[j])
        .collect();
    CsrMatrix::from_triplets(b.nrows(), b.ncols(), &trip).expect("indices in range")
}

/// Viscous block `[A]_ij = (2μ ε̇(φ_j), ε̇(φ_i))`, or the tensor form when the model
/// supplies one. Dirichlet dofs of `v` get identity rows and columns.
pub fn assemble_viscous_block(v: &FunctionSpace, visc: &dyn ViscosityModel) -> Result<CsrMatrix> {
    if !v.is_velocity() {
        return Err(Error::InvalidArgument(
            "viscous block needs a velocity space".into(),
        ));
    }
    let a = scatter(v, &viscous_locals(v, visc)?);
    Ok(constrain_symmetric(&a, v.dirichlet_mask()))
}

fn divergence_full(v: &FunctionSpace, q: &FunctionSpace) -> Result<CsrMatrix> {
    if !v.is_velocity() || q.is_velocity() {
        return Err(Error::InvalidArgument(
            "divergence needs (velocity, pressure) spaces".into(),
        ));
    }
    if !v.same_mesh(q) {
        return Err(Error::InvalidArgument(
            "velocity and pressure meshes differ".into(),
        ));
    }
    let mesh = v.mesh();
    let rule = quadrature(mass_quadrature_degree(v.degree()));
    let vt = v.element().tabulate(&rule);
    let pt = q.element().tabulate(&rule);
    let (nd, np) = (v.dofs_per_cell(), q.dofs_per_cell());
    let locals: Vec<DenseMatrix> = (0..mesh.n_cells())
        .into_par_iter()
        .map(|c| {
            let cq = cell_quad(mesh, c, &rule);
            let mut local = DenseMatrix::zeros(np, nd);
            for qp in 0..rule.len() {
                let w = cq.jxw[qp];
                for (l, &g) in vt.grads[qp].iter().enumerate() {
                    let pg = physical_grad(&cq.jit, g);
                    for i in 0..np {
                        let psi = pt.values[qp][i];
                        local[(i, 2 * l)] -= w * psi * pg[0];
                        local[(i, 2 * l + 1)] -= w * psi * pg[1];
                    }
                }
            }
            local
        })
        .collect();
    let mut trip = Vec::with_capacity(mesh.n_cells() * np * nd);
    for (c, m) in locals.iter().enumerate() {
        let (vd, pd) = (v.cell_dofs(c), q.cell_dofs(c));
        for i in 0..np {
            for j in 0..nd {
                if m[(i, j)] != 0.0 {
                    trip.push((pd[i], vd[j], m[(i, j)]));
                }
            }
        }
    }
    CsrMatrix::from_triplets(q.n_dofs(), v.n_dofs(), &trip)
}

/// Divergence `[B]_ij = -(ψ_i, ∇·φ_j)`, with Dirichlet columns of `v` removed.
pub fn assemble_divergence(v: &FunctionSpace, q: &FunctionSpace) -> Result<CsrMatrix> {
    Ok(constrain_columns(
        &divergence_full(v, q)?,
        v.dirichlet_mask(),
    ))
}

/// Pressure mass `(w ψ_i, ψ_j)` per cell. With a viscosity model, `w = 1/μ`.
pub fn assemble_pressure_mass(
    q: &FunctionSpace,
    inverse_viscosity: Option<&dyn ViscosityModel>,
) -> Result<BlockDiag> {
    if q.is_velocity() {
        return Err(Error::InvalidArgument(
            "pressure mass needs a pressure space".into(),
        ));
    }
    let mesh = q.mesh();
    let k = q.degree();
    let degree = match inverse_viscosity {
        Some(_) => viscous_quadrature_degree(k),
        None => mass_quadrature_degree(k),
    };
    let rule = quadrature(degree);
    let tab = q.element().tabulate(&rule);
    let np = q.dofs_per_cell();
    let blocks = (0..mesh.n_cells())
        .into_par_iter()
        .map(|c| {
            let cq = cell_quad(mesh, c, &rule);
            let mut m = DenseMatrix::zeros(np, np);
            for qp in 0..rule.len() {
                let weight = match inverse_viscosity {
                    Some(visc) => {
                        let mu = visc.viscosity(c, qp, cq.points[qp]);
                        if !(mu > 0.0) || !mu.is_finite() {
                            return Err(Error::Assembly(format!(
                                "viscosity {mu} at cell {c} in weighted mass"
                            )));
                        }
                        1.0 / mu
                    }
                    None => 1.0,
                };
                let w = cq.jxw[qp] * weight;
                for i in 0..np {
                    for j in 0..np {
                        m[(i, j)] += w * tab.values[qp][i] * tab.values[qp][j];
                    }
                }
            }
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    BlockDiag::new(blocks)
}

/// Cellwise `γ BᵀW⁻¹B`; `rows` of block `c` are pressure dofs `c·bs .. (c+1)·bs`.
fn augmentation_triplets(b: &CsrMatrix, w: &BlockDiag, gamma: f64) -> Vec<(usize, usize, f64)> {
    let bs = w.block_size();
    let parts: Vec<Vec<(usize, usize, f64)>> = (0..w.n_blocks())
        .into_par_iter()
        .map(|c| {
            let rows: Vec<usize> = (c * bs..(c + 1) * bs).collect();
            let mut cols: Vec<usize> = rows
                .iter()
                .flat_map(|&r| b.row(r).0.iter().copied())
                .collect();
            cols.sort_unstable();
            cols.dedup();
            if cols.is_empty() {
                return Vec::new();
            }
            let bc = b.submatrix(&rows, &cols);
            let g = bc.transpose() * w.inverse_block(c) * &bc * gamma;
            let mut t = Vec::with_capacity(cols.len() * cols.len());
            for (a, &i) in cols.iter().enumerate() {
                for (bb, &j) in cols.iter().enumerate() {
                    t.push((i, j, g[(a, bb)]));
                }
            }
            t
        })
        .collect();
    parts.concat()
}

/// `A_γ = A + γ BᵀW⁻¹B`. For `γ = 0` the result is a copy of `A`.
pub fn assemble_augmented(
    a: &CsrMatrix,
    b: &CsrMatrix,
    w: &BlockDiag,
    gamma: f64,
) -> Result<CsrMatrix> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "gamma must be >= 0, got {gamma}"
        )));
    }
    if b.ncols() != a.nrows() || b.nrows() != w.n() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            got: b.ncols(),
        });
    }
    if gamma == 0.0 {
        return Ok(a.clone());
    }
    let mut trip = a.triplets();
    trip.extend(augmentation_triplets(b, w, gamma));
    CsrMatrix::from_triplets(a.nrows(), a.ncols(), &trip)
}

/// `r1 + γ BᵀW⁻¹ r2`.
pub fn augmented_rhs(r1: &[f64], r2: &[f64], b: &CsrMatrix, w: &BlockDiag, gamma: f64) -> Vec<f64> {
    let mut out = r1.to_vec();
    if gamma == 0.0 {
        return out;
    }
    let mut t = vec![0.0; r2.len()];
    w.apply_inverse(r2, &mut t);
    let mut bt = vec![0.0; r1.len()];
    b.spmv_transpose_into(&t, &mut bt);
    for (o, v) in out.iter_mut().zip(&bt) {
        *o += gamma * v;
    }
    out
}

/// Load vector `(f, φ_i)`; Dirichlet entries are left untouched (zero).
pub fn assemble_load(v: &FunctionSpace, f: &(dyn Fn([f64; 2]) -> [f64; 2] + Sync)) -> Vec<f64> {
    let mesh = v.mesh();
    let rule = quadrature(viscous_quadrature_degree(v.degree()));
    let tab = v.element().tabulate(&rule);
    let nd = v.dofs_per_cell();
    let locals: Vec<Vec<f64>> = (0..mesh.n_cells())
        .into_par_iter()
        .map(|c| {
            let cq = cell_quad(mesh, c, &rule);
            let mut l = vec![0.0; nd];
            for qp in 0..rule.len() {
                let fx = f(cq.points[qp]);
                let w = cq.jxw[qp];
                for (s, &phi) in tab.values[qp].iter().enumerate() {
                    l[2 * s] += w * fx[0] * phi;
                    l[2 * s + 1] += w * fx[1] * phi;
                }
            }
            l
        })
        .collect();
    let mut out = vec![0.0; v.n_dofs()];
    for (c, l) in locals.iter().enumerate() {
        for (&d, &val) in v.cell_dofs(c).iter().zip(l) {
            out[d] += val;
        }
    }
    out
}

/// All operators of one (linearized) Stokes problem.
#[derive(Clone, Debug)]
pub struct StokesBlocks {
    pub a: CsrMatrix,
    pub b: CsrMatrix,
    pub mp: BlockDiag,
    pub mp_invvisc: BlockDiag,
    pub a_gamma: CsrMatrix,
    pub gamma: f64,
    pub w_choice: WChoice,
    /// Momentum right-hand side with boundary data lifted (zero on Dirichlet dofs).
    pub rhs_u: Vec<f64>,
    pub rhs_p: Vec<f64>,
    /// Boundary data, to be added to the homogeneous solution.
    pub lift: Vec<f64>,
    pub dirichlet: Vec<bool>,
    pub mean_constraint: bool,
    /// Coefficients of the constant pressure.
    pub constant_pressure: Vec<f64>,
    /// `∫ψ_i` for each pressure dof.
    pub pressure_integrals: Vec<f64>,
}

/// Inputs for [`assemble_stokes`].
pub struct StokesAssembly<'a> {
    pub velocity: &'a FunctionSpace,
    pub pressure: &'a FunctionSpace,
    pub viscosity: &'a dyn ViscosityModel,
    pub body_force: &'a (dyn Fn([f64; 2]) -> [f64; 2] + Sync),
    pub boundary_values: &'a (dyn Fn([f64; 2]) -> [f64; 2] + Sync),
    pub gamma: f64,
    pub w_choice: WChoice,
}

pub fn assemble_stokes(p: &StokesAssembly) -> Result<StokesBlocks> {
    let (v, q) = (p.velocity, p.pressure);
    let a_full = scatter(v, &viscous_locals(v, p.viscosity)?);
    let b_full = divergence_full(v, q)?;
    let mask = v.dirichlet_mask();
    let lift: Vec<f64> = {
        let g = v.interpolate(p.boundary_values);
        g.iter()
            .zip(mask)
            .map(|(&x, &m)| if m { x } else { 0.0 })
            .collect()
    };
    let ag = a_full.spmv(&lift)?;
    let mut rhs_u = assemble_load(v, p.body_force);
    for (i, r) in rhs_u.iter_mut().enumerate() {
        *r = if mask[i] { 0.0 } else { *r - ag[i] };
    }
    let rhs_p: Vec<f64> = b_full.spmv(&lift)?.iter().map(|x| -x).collect();
    let a = constrain_symmetric(&a_full, mask);
    let b = constrain_columns(&b_full, mask);
    let mp = assemble_pressure_mass(q, None)?;
    let mp_invvisc = assemble_pressure_mass(q, Some(p.viscosity))?;
    StokesBlocks::from_parts(
        a,
        b,
        mp,
        mp_invvisc,
        rhs_u,
        rhs_p,
        lift,
        mask.to_vec(),
        q,
        p.gamma,
        p.w_choice,
    )
}

impl StokesBlocks {
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        a: CsrMatrix,
        b: CsrMatrix,
        mp: BlockDiag,
        mp_invvisc: BlockDiag,
        rhs_u: Vec<f64>,
        rhs_p: Vec<f64>,
        lift: Vec<f64>,
        dirichlet: Vec<bool>,
        q: &FunctionSpace,
        gamma: f64,
        w_choice: WChoice,
    ) -> Result<Self> {
        let w = match w_choice {
            WChoice::Mp => &mp,
            WChoice::MpInvVisc => &mp_invvisc,
        };
        let a_gamma = assemble_augmented(&a, &b, w, gamma)?;
        Ok(Self {
            a,
            b,
            mp,
            mp_invvisc,
            a_gamma,
            gamma,
            w_choice,
            rhs_u,
            rhs_p,
            lift,
            dirichlet,
            mean_constraint: q.mean_constraint(),
            constant_pressure: q.constant_mode(),
            pressure_integrals: q.integrals().to_vec(),
        })
    }

    pub fn n_u(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_p(&self) -> usize {
        self.b.nrows()
    }

    pub fn w(&self) -> &BlockDiag {
        match self.w_choice {
            WChoice::Mp => &self.mp,
            WChoice::MpInvVisc => &self.mp_invvisc,
        }
    }

    /// Same problem with a different augmentation.
    pub fn with_gamma(&self, gamma: f64, w_choice: WChoice) -> Result<Self> {
        let mut out = self.clone();
        out.gamma = gamma;
        out.w_choice = w_choice;
        out.a_gamma = assemble_augmented(&self.a, &self.b, out.w(), gamma)?;
        Ok(out)
    }

    /// Momentum right-hand side of the augmented system.
    pub fn augmented_rhs_u(&self) -> Vec<f64> {
        augmented_rhs(&self.rhs_u, &self.rhs_p, &self.b, self.w(), self.gamma)
    }

    pub fn free_velocity_dofs(&self) -> Vec<usize> {
        (0..self.n_u()).filter(|&i| !self.dirichlet[i]).collect()
    }

    /// Subtracts the mean from a pressure vector when the constraint applies.
    pub fn project_pressure(&self, p: &mut [f64]) {
        if !self.mean_constraint {
            return;
        }
        let area: f64 = self
            .constant_pressure
            .iter()
            .zip(&self.pressure_integrals)
            .map(|(c, w)| c * w)
            .sum();
        let m: f64 = self
            .pressure_integrals
            .iter()
            .zip(p.iter())
            .map(|(w, v)| w * v)
            .sum::<f64>()
            / area;
        for (pi, c) in p.iter_mut().zip(&self.constant_pressure) {
            *pi -= m * c;
        }
    }

    /// Writes `A`, `B`, `M_p`, `M_p(1/μ)` and `A_γ` as Matrix Market files.
    pub fn write_matrix_market(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let items = [
            ("A.mtx", self.a.clone()),
            ("B.mtx", self.b.clone()),
            ("Mp.mtx", self.mp.to_csr()),
            ("Mp_invvisc.mtx", self.mp_invvisc.to_csr()),
            ("A_gamma.mtx", self.a_gamma.clone()),
        ];
        for (name, m) in items {
            m.write_matrix_market(BufWriter::new(File::create(dir.join(name))?))?;
        }
        Ok(())
    }
}
