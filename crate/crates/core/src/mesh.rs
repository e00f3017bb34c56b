//! Structured quadrilateral meshes of rectangles, uniform refinement and vertex stars.
//!
//! Vertices and cells are numbered lexicographically by (y, x). Cell `c = j * nx + i`
//! has the counterclockwise vertices `(i, j), (i+1, j), (i+1, j+1), (i, j+1)`.

use std::io::Write;

use crate::elements::FunctionSpace;
use crate::error::{Error, Result};

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub const UNIT: Rect = Rect {
        x0: 0.0,
        x1: 1.0,
        y0: 0.0,
        y1: 1.0,
    };

    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Self { x0, x1, y0, y1 }
    }
}

/// Affine map `x = J ξ + b` from the reference square `(-1, 1)²` onto a cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellMap {
    pub jacobian: [[f64; 2]; 2],
    pub offset: [f64; 2],
}

impl CellMap {
    pub fn map(&self, xi: [f64; 2]) -> [f64; 2] {
        let j = &self.jacobian;
        [
            j[0][0] * xi[0] + j[0][1] * xi[1] + self.offset[0],
            j[1][0] * xi[0] + j[1][1] * xi[1] + self.offset[1],
        ]
    }

    pub fn det(&self) -> f64 {
        let j = &self.jacobian;
        j[0][0] * j[1][1] - j[0][1] * j[1][0]
    }

    /// `J⁻ᵀ`, which maps reference gradients to physical gradients.
    pub fn inverse_transpose(&self) -> [[f64; 2]; 2] {
        let j = &self.jacobian;
        let d = self.det();
        [[j[1][1] / d, -j[1][0] / d], [-j[0][1] / d, j[0][0] / d]]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    xs: Vec<f64>,
    ys: Vec<f64>,
    vertices: Vec<[f64; 2]>,
    cells: Vec<[usize; 4]>,
    cell_maps: Vec<CellMap>,
    boundary: Vec<bool>,
}

/// Builds a uniform `nx × ny` mesh of `domain`.
pub fn build_rect_mesh(domain: Rect, nx: usize, ny: usize) -> Result<Mesh> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidArgument(format!(
            "mesh needs nx, ny >= 1, got {nx}x{ny}"
        )));
    }
    if !(domain.x1 > domain.x0 && domain.y1 > domain.y0) {
        return Err(Error::InvalidArgument(format!(
            "degenerate domain {domain:?}"
        )));
    }
    let line = |a: f64, b: f64, n: usize| -> Vec<f64> {
        (0..=n)
            .map(|i| {
                if i == n {
                    b
                } else {
                    a + (b - a) * i as f64 / n as f64
                }
            })
            .collect()
    };
    Mesh::from_coordinates(
        line(domain.x0, domain.x1, nx),
        line(domain.y0, domain.y1, ny),
    )
}

impl Mesh {
    /// Tensor mesh from strictly increasing coordinate lines.
    pub fn from_coordinates(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        for (name, c) in [("x", &xs), ("y", &ys)] {
            if c.len() < 2 {
                return Err(Error::InvalidArgument(format!(
                    "{name} needs at least two lines"
                )));
            }
            if c.windows(2).any(|w| !(w[1] > w[0])) || c.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} coordinates must be finite and strictly increasing"
                )));
            }
        }
        let (nx, ny) = (xs.len() - 1, ys.len() - 1);
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        let mut boundary = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push([xs[i], ys[j]]);
                boundary.push(i == 0 || j == 0 || i == nx || j == ny);
            }
        }
        let mut cells = Vec::with_capacity(nx * ny);
        let mut cell_maps = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let v = |a: usize, b: usize| (j + b) * (nx + 1) + i + a;
                cells.push([v(0, 0), v(1, 0), v(1, 1), v(0, 1)]);
                cell_maps.push(CellMap {
                    jacobian: [
                        [0.5 * (xs[i + 1] - xs[i]), 0.0],
                        [0.0, 0.5 * (ys[j + 1] - ys[j])],
                    ],
                    offset: [0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[j] + ys[j + 1])],
                });
            }
        }
        Ok(Self {
            xs,
            ys,
            vertices,
            cells,
            cell_maps,
            boundary,
        })
    }

    pub fn nx(&self) -> usize {
        self.xs.len() - 1
    }

    pub fn ny(&self) -> usize {
        self.ys.len() - 1
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn cells(&self) -> &[[usize; 4]] {
        &self.cells
    }

    pub fn cell_map(&self, c: usize) -> &CellMap {
        &self.cell_maps[c]
    }

    pub fn is_boundary_vertex(&self, v: usize) -> bool {
        self.boundary[v]
    }

    pub fn boundary_vertices(&self) -> Vec<usize> {
        (0..self.n_vertices())
            .filter(|&v| self.boundary[v])
            .collect()
    }

    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        j * self.nx() + i
    }

    pub fn cell_ij(&self, c: usize) -> (usize, usize) {
        (c % self.nx(), c / self.nx())
    }

    pub fn vertex_ij(&self, v: usize) -> (usize, usize) {
        (v % (self.nx() + 1), v / (self.nx() + 1))
    }

    pub fn bounding_box(&self) -> Rect {
        Rect::new(
            self.xs[0],
            *self.xs.last().unwrap(),
            self.ys[0],
            *self.ys.last().unwrap(),
        )
    }

    pub fn cell_area(&self, c: usize) -> f64 {
        4.0 * self.cell_maps[c].det()
    }

    /// Cells containing vertex `v` (1, 2 or 4 of them).
    pub fn cells_of_vertex(&self, v: usize) -> Vec<usize> {
        let (vi, vj) = self.vertex_ij(v);
        let mut out = Vec::with_capacity(4);
        for j in vj.saturating_sub(1)..(vj + 1).min(self.ny() + 1) {
            for i in vi.saturating_sub(1)..(vi + 1).min(self.nx() + 1) {
                if i < self.nx() && j < self.ny() {
                    out.push(self.cell_index(i, j));
                }
            }
        }
        out
    }

    /// Cell containing `x` and the reference coordinates of `x` in it.
    /// Points on shared edges are assigned to the cell with the larger index.
    pub fn locate(&self, x: [f64; 2]) -> Option<(usize, [f64; 2])> {
        let i = locate_interval(&self.xs, x[0])?;
        let j = locate_interval(&self.ys, x[1])?;
        let c = self.cell_index(i, j);
        let m = &self.cell_maps[c];
        let xi = [
            (x[0] - m.offset[0]) / m.jacobian[0][0],
            (x[1] - m.offset[1]) / m.jacobian[1][1],
        ];
        Some((c, xi))
    }

    /// Plain-text dump: `v x y` per vertex, then `c i0 i1 i2 i3` per cell.
    pub fn write_text<W: Write>(&self, mut out: W) -> Result<()> {
        for v in &self.vertices {
            writeln!(out, "v {} {}", v[0], v[1])?;
        }
        for c in &self.cells {
            writeln!(out, "c {} {} {} {}", c[0], c[1], c[2], c[3])?;
        }
        Ok(())
    }
}

fn locate_interval(lines: &[f64], x: f64) -> Option<usize> {
    let n = lines.len() - 1;
    if !(x >= lines[0] && x <= lines[n]) {
        return None;
    }
    let k = lines.partition_point(|&l| l <= x);
    Some(k.saturating_sub(1).min(n - 1))
}

/// Children of each coarse cell, indexed by `b * 2 + a` for the child at offset (a, b).
pub type ChildMap = Vec<[usize; 4]>;

/// Uniform 1→4 refinement. Coarse coordinates are copied, so coarse vertex (i, j)
/// is fine vertex (2i, 2j) with bit-identical coordinates.
pub fn refine(mesh: &Mesh) -> (Mesh, ChildMap) {
    let split = |c: &[f64]| -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * c.len() - 1);
        for w in c.windows(2) {
            out.push(w[0]);
            out.push(0.5 * (w[0] + w[1]));
        }
        out.push(*c.last().unwrap());
        out
    };
    let fine = Mesh::from_coordinates(split(&mesh.xs), split(&mesh.ys))
        .expect("refinement of a valid mesh is valid");
    let children = (0..mesh.n_cells())
        .map(|c| {
            let (i, j) = mesh.cell_ij(c);
            let f = |a: usize, b: usize| fine.cell_index(2 * i + a, 2 * j + b);
            [f(0, 0), f(1, 0), f(0, 1), f(1, 1)]
        })
        .collect();
    (fine, children)
}

/// Nested sequence of uniformly refined meshes, coarsest first.
#[derive(Clone, Debug)]
pub struct MeshHierarchy {
    pub levels: Vec<Mesh>,
    /// `child_maps[l]` maps cells of level `l` to their children on level `l + 1`.
    pub child_maps: Vec<ChildMap>,
    /// `vertex_embedding[l]` maps vertices of level `l` to vertices of level `l + 1`.
    pub vertex_embedding: Vec<Vec<usize>>,
}

impl MeshHierarchy {
    pub fn new(coarse: Mesh, n_levels: usize) -> Result<Self> {
        if n_levels == 0 {
            return Err(Error::InvalidArgument(
                "hierarchy needs at least one level".into(),
            ));
        }
        let mut levels = vec![coarse];
        let mut child_maps = Vec::new();
        let mut vertex_embedding = Vec::new();
        for _ in 1..n_levels {
            let coarse = levels.last().unwrap();
            let (fine, cm) = refine(coarse);
            let emb = (0..coarse.n_vertices())
                .map(|v| {
                    let (i, j) = coarse.vertex_ij(v);
                    2 * j * (fine.nx() + 1) + 2 * i
                })
                .collect();
            child_maps.push(cm);
            vertex_embedding.push(emb);
            levels.push(fine);
        }
        Ok(Self {
            levels,
            child_maps,
            vertex_embedding,
        })
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn finest(&self) -> &Mesh {
        self.levels.last().unwrap()
    }
}

/// Free velocity dofs whose basis support lies in the star of one vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct StarPatch {
    pub vertex: usize,
    pub cells: Vec<usize>,
    pub interior_velocity_dofs: Vec<usize>,
}

/// One patch per mesh vertex. Patches at boundary vertices are kept; Dirichlet dofs are
/// excluded everywhere.
pub fn vertex_stars(mesh: &Mesh, space: &FunctionSpace) -> Result<Vec<StarPatch>> {
    if !space.is_velocity() {
        return Err(Error::InvalidArgument(
            "vertex stars need a velocity space".into(),
        ));
    }
    let k = space.degree();
    if k < 2 {
        return Err(Error::Unsupported(format!(
            "star patches need k >= 2, got {k}"
        )));
    }
    if space.mesh().nx() != mesh.nx() || space.mesh().ny() != mesh.ny() {
        return Err(Error::InvalidArgument(
            "space lives on a different mesh".into(),
        ));
    }
    let (nx, ny) = (mesh.nx(), mesh.ny());
    let nnx = k * nx + 1;
    let mut patches = Vec::with_capacity(mesh.n_vertices());
    for v in 0..mesh.n_vertices() {
        let (vi, vj) = mesh.vertex_ij(v);
        // node lines whose support (cells touching the line) fits in cells vc-1..=vc
        let range = |vc: usize, n: usize| {
            let (clo, chi) = (vc.saturating_sub(1), vc.min(n - 1));
            (k * clo..=k * (chi + 1)).filter(move |&l| {
                let (lo, hi) = if l % k == 0 {
                    ((l / k).saturating_sub(1), (l / k).min(n - 1))
                } else {
                    (l / k, l / k)
                };
                lo >= clo && hi <= chi
            })
        };
        let mut dofs = Vec::new();
        for jn in range(vj, ny) {
            for inn in range(vi, nx) {
                let node = jn * nnx + inn;
                for comp in 0..2 {
                    let d = 2 * node + comp;
                    if !space.is_dirichlet(d) {
                        dofs.push(d);
                    }
                }
            }
        }
        patches.push(StarPatch {
            vertex: v,
            cells: mesh.cells_of_vertex(v),
            interior_velocity_dofs: dofs,
        });
    }
    Ok(patches)
}
