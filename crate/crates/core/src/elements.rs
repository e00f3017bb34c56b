//! Reference elements, quadrature and dof numbering for `[Q_k]²` velocity and
//! discontinuous `P_{k-1}` pressure on quadrilaterals.
//!
//! Velocity dofs are node-major: dof `2 * node + comp`, nodes lexicographic by (y, x)
//! on the `(k nx + 1) × (k ny + 1)` grid of equispaced Lagrange nodes. Pressure dofs
//! are cell-local monomials `ξ^a η^b`, `a + b ≤ k - 1`, the constant first.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// Tensor-product quadrature on `(-1, 1)²`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Gauss–Legendre nodes (ascending) and weights on `(-1, 1)`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * z * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// Tensor Gauss–Legendre rule exact for polynomials of degree `degree` in each variable.
pub fn quadrature(degree: usize) -> QuadratureRule {
    let n = (degree + 2) / 2;
    let (x, w) = gauss_legendre(n);
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            points.push([x[i], x[j]]);
            weights.push(w[i] * w[j]);
        }
    }
    QuadratureRule {
        points,
        weights,
        degree,
    }
}

/// 1D Lagrange basis on equispaced nodes of `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Lagrange1d {
    nodes: Vec<f64>,
}

impl Lagrange1d {
    pub fn new(k: usize) -> Self {
        let nodes = (0..=k).map(|i| -1.0 + 2.0 * i as f64 / k as f64).collect();
        Self { nodes }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Values and derivatives of all basis functions at `x`.
    pub fn eval(&self, x: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.nodes.len();
        let mut v = vec![0.0; n];
        let mut d = vec![0.0; n];
        for i in 0..n {
            let xi = self.nodes[i];
            let mut val = 1.0;
            let mut der = 0.0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let denom = xi - self.nodes[j];
                // product rule: d(val * t) = der * t + val * t'
                der = der * (x - self.nodes[j]) / denom + val / denom;
                val *= (x - self.nodes[j]) / denom;
            }
            v[i] = val;
            d[i] = der;
        }
        (v, d)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementKind {
    /// Continuous vector `Q_k`; the scalar basis is applied per component.
    QkVector,
    /// Discontinuous scalar `P_{k-1}` in monomial form.
    PdiscScalar,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceElement {
    kind: ElementKind,
    k: usize,
    lagrange: Lagrange1d,
    exponents: Vec<(i32, i32)>,
}

impl ReferenceElement {
    pub fn velocity(k: usize) -> Self {
        Self {
            kind: ElementKind::QkVector,
            k,
            lagrange: Lagrange1d::new(k),
            exponents: Vec::new(),
        }
    }

    pub fn pressure(k: usize) -> Self {
        let mut exponents = Vec::new();
        for d in 0..k as i32 {
            for b in 0..=d {
                exponents.push((d - b, b));
            }
        }
        Self {
            kind: ElementKind::PdiscScalar,
            k,
            lagrange: Lagrange1d::new(1),
            exponents,
        }
    }

    pub fn kind(&self) -> ElementKind {
        self.kind
    }

    /// The velocity order `k` of the pair this element belongs to.
    pub fn order(&self) -> usize {
        self.k
    }

    /// Number of scalar basis functions.
    pub fn n_basis(&self) -> usize {
        match self.kind {
            ElementKind::QkVector => (self.k + 1) * (self.k + 1),
            ElementKind::PdiscScalar => self.exponents.len(),
        }
    }

    pub fn exponents(&self) -> &[(i32, i32)] {
        &self.exponents
    }

    /// Reference node coordinates of the scalar `Q_k` basis, local index `b (k+1) + a`.
    pub fn node_points(&self) -> Vec<[f64; 2]> {
        match self.kind {
            ElementKind::QkVector => {
                let n = self.lagrange.nodes();
                let mut out = Vec::with_capacity(n.len() * n.len());
                for &y in n {
                    for &x in n {
                        out.push([x, y]);
                    }
                }
                out
            }
            ElementKind::PdiscScalar => Vec::new(),
        }
    }

    /// Values and reference gradients of the scalar basis at `xi`.
    pub fn eval(&self, xi: [f64; 2]) -> (Vec<f64>, Vec<[f64; 2]>) {
        match self.kind {
            ElementKind::QkVector => {
                let (vx, dx) = self.lagrange.eval(xi[0]);
                let (vy, dy) = self.lagrange.eval(xi[1]);
                let n = vx.len();
                let mut v = Vec::with_capacity(n * n);
                let mut g = Vec::with_capacity(n * n);
                for b in 0..n {
                    for a in 0..n {
                        v.push(vx[a] * vy[b]);
                        g.push([dx[a] * vy[b], vx[a] * dy[b]]);
                    }
                }
                (v, g)
            }
            ElementKind::PdiscScalar => {
                let mut v = Vec::with_capacity(self.exponents.len());
                let mut g = Vec::with_capacity(self.exponents.len());
                for &(a, b) in &self.exponents {
                    let pa = xi[0].powi(a);
                    let pb = xi[1].powi(b);
                    v.push(pa * pb);
                    let da = if a > 0 {
                        a as f64 * xi[0].powi(a - 1)
                    } else {
                        0.0
                    };
                    let db = if b > 0 {
                        b as f64 * xi[1].powi(b - 1)
                    } else {
                        0.0
                    };
                    g.push([da * pb, pa * db]);
                }
                (v, g)
            }
        }
    }

    /// Basis values and reference gradients at every point of `rule`.
    pub fn tabulate(&self, rule: &QuadratureRule) -> Tabulation {
        let (values, grads) = rule.points.iter().map(|&p| self.eval(p)).unzip();
        Tabulation { values, grads }
    }
}

/// `values[q][i]`, `grads[q][i]` for quadrature point `q` and scalar basis `i`.
#[derive(Clone, Debug)]
pub struct Tabulation {
    pub values: Vec<Vec<f64>>,
    pub grads: Vec<Vec<[f64; 2]>>,
}

/// Which velocity components are prescribed on each side of the rectangle.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DirichletSides {
    pub left: [bool; 2],
    pub right: [bool; 2],
    pub bottom: [bool; 2],
    pub top: [bool; 2],
}

impl DirichletSides {
    pub fn all() -> Self {
        Self {
            left: [true; 2],
            right: [true; 2],
            bottom: [true; 2],
            top: [true; 2],
        }
    }

    pub fn none() -> Self {
        Self::default()
    }

    /// True when the normal component is prescribed on the whole boundary, which
    /// leaves the pressure determined only up to a constant.
    pub fn encloses(&self) -> bool {
        self.left[0] && self.right[0] && self.bottom[1] && self.top[1]
    }
}

#[derive(Clone, Debug)]
pub struct FunctionSpace {
    mesh: Arc<Mesh>,
    element: ReferenceElement,
    dof_map: Vec<Vec<usize>>,
    n_dofs: usize,
    dirichlet: Vec<bool>,
    mean_constraint: bool,
    // ∫ψ_i for pressure dofs
    integrals: Vec<f64>,
}

/// Continuous `[Q_k]²` space without boundary conditions.
pub fn make_velocity_space(mesh: &Mesh, k: usize) -> Result<FunctionSpace> {
    if k < 2 {
        return Err(Error::Unsupported(format!(
            "velocity degree must be >= 2, got {k}"
        )));
    }
    let (nx, ny) = (mesh.nx(), mesh.ny());
    let nnx = k * nx + 1;
    let n_nodes = nnx * (k * ny + 1);
    let mut dof_map = Vec::with_capacity(mesh.n_cells());
    for c in 0..mesh.n_cells() {
        let (i, j) = mesh.cell_ij(c);
        let mut dofs = Vec::with_capacity(2 * (k + 1) * (k + 1));
        for b in 0..=k {
            for a in 0..=k {
                let node = (k * j + b) * nnx + k * i + a;
                dofs.push(2 * node);
                dofs.push(2 * node + 1);
            }
        }
        dof_map.push(dofs);
    }
    Ok(FunctionSpace {
        mesh: Arc::new(mesh.clone()),
        element: ReferenceElement::velocity(k),
        dof_map,
        n_dofs: 2 * n_nodes,
        dirichlet: vec![false; 2 * n_nodes],
        mean_constraint: false,
        integrals: Vec::new(),
    })
}

/// Discontinuous `P_{k-1}` space; carries the zero-mean constraint by default.
pub fn make_pressure_space(mesh: &Mesh, k: usize) -> Result<FunctionSpace> {
    if k < 2 {
        return Err(Error::Unsupported(format!(
            "pressure space needs k >= 2, got {k}"
        )));
    }
    let element = ReferenceElement::pressure(k);
    let nb = element.n_basis();
    let dof_map = (0..mesh.n_cells())
        .map(|c| (c * nb..(c + 1) * nb).collect())
        .collect();
    let mut integrals = Vec::with_capacity(mesh.n_cells() * nb);
    // ∫_{-1}^{1} ξ^a dξ
    let mono = |a: i32| {
        if a % 2 == 1 {
            0.0
        } else {
            2.0 / (a + 1) as f64
        }
    };
    for c in 0..mesh.n_cells() {
        let det = mesh.cell_map(c).det();
        for &(a, b) in element.exponents() {
            integrals.push(det * mono(a) * mono(b));
        }
    }
    let n = mesh.n_cells() * nb;
    Ok(FunctionSpace {
        mesh: Arc::new(mesh.clone()),
        element,
        dof_map,
        n_dofs: n,
        dirichlet: vec![false; n],
        mean_constraint: true,
        integrals,
    })
}

impl FunctionSpace {
    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn element(&self) -> &ReferenceElement {
        &self.element
    }

    pub fn is_velocity(&self) -> bool {
        self.element.kind() == ElementKind::QkVector
    }

    /// Velocity order `k` of the pair.
    pub fn degree(&self) -> usize {
        self.element.order()
    }

    pub fn n_dofs(&self) -> usize {
        self.n_dofs
    }

    pub fn cell_dofs(&self, c: usize) -> &[usize] {
        &self.dof_map[c]
    }

    pub fn dofs_per_cell(&self) -> usize {
        self.dof_map[0].len()
    }

    pub fn mean_constraint(&self) -> bool {
        self.mean_constraint
    }

    pub fn with_mean_constraint(mut self, on: bool) -> Self {
        if !self.is_velocity() {
            self.mean_constraint = on;
        }
        self
    }

    pub fn is_dirichlet(&self, dof: usize) -> bool {
        self.dirichlet[dof]
    }

    pub fn dirichlet_mask(&self) -> &[bool] {
        &self.dirichlet
    }

    pub fn dirichlet_dofs(&self) -> Vec<usize> {
        (0..self.n_dofs).filter(|&d| self.dirichlet[d]).collect()
    }

    pub fn free_dofs(&self) -> Vec<usize> {
        (0..self.n_dofs).filter(|&d| !self.dirichlet[d]).collect()
    }

    /// Number of nodes per direction of the velocity node grid.
    pub fn node_grid(&self) -> (usize, usize) {
        let k = self.degree();
        (k * self.mesh.nx() + 1, k * self.mesh.ny() + 1)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_dofs / 2
    }

    /// Physical coordinates of velocity node `node`.
    pub fn node_coords(&self, node: usize) -> [f64; 2] {
        let k = self.degree();
        let (nnx, _) = self.node_grid();
        let line = |l: usize, lines: &[f64]| {
            let n = lines.len() - 1;
            let cell = (l / k).min(n - 1);
            let a = l - k * cell;
            if a == 0 {
                lines[cell]
            } else if a == k {
                lines[cell + 1]
            } else {
                lines[cell] + (lines[cell + 1] - lines[cell]) * a as f64 / k as f64
            }
        };
        [
            line(node % nnx, self.mesh.xs()),
            line(node / nnx, self.mesh.ys()),
        ]
    }

    /// Flags boundary dofs of the listed sides and components as Dirichlet.
    pub fn with_dirichlet(mut self, sides: &DirichletSides) -> Self {
        if !self.is_velocity() {
            return self;
        }
        let (nnx, nny) = self.node_grid();
        for jn in 0..nny {
            for inn in 0..nnx {
                let node = jn * nnx + inn;
                for comp in 0..2 {
                    let fixed = (inn == 0 && sides.left[comp])
                        || (inn == nnx - 1 && sides.right[comp])
                        || (jn == 0 && sides.bottom[comp])
                        || (jn == nny - 1 && sides.top[comp]);
                    if fixed {
                        self.dirichlet[2 * node + comp] = true;
                    }
                }
            }
        }
        self
    }

    /// Nodal interpolant of a vector field.
    pub fn interpolate(&self, f: impl Fn([f64; 2]) -> [f64; 2]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_dofs];
        for node in 0..self.n_nodes() {
            let v = f(self.node_coords(node));
            out[2 * node] = v[0];
            out[2 * node + 1] = v[1];
        }
        out
    }

    /// Coefficient vector of the constant pressure 1.
    pub fn constant_mode(&self) -> Vec<f64> {
        let nb = self.element.n_basis();
        let mut c = vec![0.0; self.n_dofs];
        for cell in 0..self.mesh.n_cells() {
            c[cell * nb] = 1.0;
        }
        c
    }

    /// `∫ψ_i` for every pressure dof (equals `M_p` times the constant mode).
    pub fn integrals(&self) -> &[f64] {
        &self.integrals
    }

    /// Mean value of a pressure field.
    pub fn mean(&self, p: &[f64]) -> f64 {
        let area: f64 = (0..self.mesh.n_cells())
            .map(|c| self.mesh.cell_area(c))
            .sum();
        self.integrals
            .iter()
            .zip(p)
            .map(|(w, v)| w * v)
            .sum::<f64>()
            / area
    }

    /// Subtracts the mean from a pressure field, if the space carries the constraint.
    pub fn project_mean_zero(&self, p: &mut [f64]) {
        if !self.mean_constraint || self.is_velocity() {
            return;
        }
        let m = self.mean(p);
        let nb = self.element.n_basis();
        for cell in 0..self.mesh.n_cells() {
            p[cell * nb] -= m;
        }
    }

    pub fn same_mesh(&self, other: &FunctionSpace) -> bool {
        Arc::ptr_eq(&self.mesh, &other.mesh)
            || (self.mesh.xs() == other.mesh.xs() && self.mesh.ys() == other.mesh.ys())
    }
}
