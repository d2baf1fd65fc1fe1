//! Stationary background tetrahedral mesh.
//!
//! The box is subdivided uniformly into cubes of side length `h`, and every
//! cube is split into 6 tetrahedra by the Kuhn (Freudenthal) subdivision:
//! one tetrahedron per permutation of the axes, all sharing the main cube
//! diagonal. Using the same diagonal direction in every cube makes the
//! triangulation face-to-face conforming across cube boundaries.
//!
//! Connectivity is implicit: vertex, cube and tet ids are derived from grid
//! indices, so no per-element storage is needed even for meshes with
//! millions of tetrahedra of which only a narrow band is ever touched.

use crate::vec3::{det3, inv3, sub, Mat3, Vec3};
use crate::{Error, Result};

/// Axis permutations for the 6 Kuhn tetrahedra of a cube, in lexicographic
/// order. The local tet index is the index into this table.
const KUHN_PERMS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

/// Parity of the permutations above; odd ones get two vertices swapped so
/// every tet comes out with positive volume.
const KUHN_ODD: [bool; 6] = [false, true, true, false, false, true];

/// Uniform Kuhn-subdivided tetrahedral mesh over an axis-aligned box.
#[derive(Debug, Clone)]
pub struct BackgroundMesh {
    box_min: Vec3,
    box_max: Vec3,
    h: f64,
    cells: [usize; 3],
}

/// Per-element geometry of one tetrahedron: vertex ids and coordinates,
/// the (constant) gradients of the four P1 nodal basis functions, and the
/// volume.
#[derive(Debug, Clone)]
pub struct ElementGeometry {
    pub tet: usize,
    pub vertices: [usize; 4],
    pub coords: [Vec3; 4],
    pub grads: [Vec3; 4],
    pub volume: f64,
}

impl BackgroundMesh {
    /// Builds the mesh over `[box_min, box_max]` with cube side `h`. The box
    /// widths must be positive integer multiples of `h` (relative tolerance
    /// 1e-12).
    pub fn build(box_min: Vec3, box_max: Vec3, h: f64) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::Config(format!("cube side h={h} must be positive")));
        }
        let mut cells = [0usize; 3];
        for a in 0..3 {
            let width = box_max[a] - box_min[a];
            if !(width > 0.0) {
                return Err(Error::Config(format!(
                    "box width along axis {a} is {width}, must be positive"
                )));
            }
            let ratio = width / h;
            let n = ratio.round();
            if n < 1.0 || (ratio - n).abs() > 1e-12 * ratio.max(1.0) {
                return Err(Error::Config(format!(
                    "box width {width} along axis {a} is not an integer multiple of h={h}"
                )));
            }
            cells[a] = n as usize;
        }
        Ok(Self {
            box_min,
            box_max,
            h,
            cells,
        })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn box_min(&self) -> Vec3 {
        self.box_min
    }

    pub fn box_max(&self) -> Vec3 {
        self.box_max
    }

    pub fn cells_per_axis(&self) -> [usize; 3] {
        self.cells
    }

    pub fn n_cubes(&self) -> usize {
        self.cells[0] * self.cells[1] * self.cells[2]
    }

    pub fn n_tets(&self) -> usize {
        6 * self.n_cubes()
    }

    pub fn n_vertices(&self) -> usize {
        (self.cells[0] + 1) * (self.cells[1] + 1) * (self.cells[2] + 1)
    }

    #[inline]
    pub fn vertex_id(&self, i: usize, j: usize, k: usize) -> usize {
        let nx = self.cells[0] + 1;
        let ny = self.cells[1] + 1;
        i + nx * (j + ny * k)
    }

    /// Grid indices of a vertex id.
    #[inline]
    pub fn vertex_grid(&self, v: usize) -> [usize; 3] {
        let nx = self.cells[0] + 1;
        let ny = self.cells[1] + 1;
        [v % nx, (v / nx) % ny, v / (nx * ny)]
    }

    /// Coordinates of a vertex: exactly `box_min + index * h` per axis.
    #[inline]
    pub fn vertex_coords(&self, v: usize) -> Vec3 {
        let g = self.vertex_grid(v);
        [
            self.box_min[0] + g[0] as f64 * self.h,
            self.box_min[1] + g[1] as f64 * self.h,
            self.box_min[2] + g[2] as f64 * self.h,
        ]
    }

    #[inline]
    fn cube_id(&self, c: [usize; 3]) -> usize {
        c[0] + self.cells[0] * (c[1] + self.cells[1] * c[2])
    }

    #[inline]
    fn cube_grid(&self, cube: usize) -> [usize; 3] {
        let nx = self.cells[0];
        let ny = self.cells[1];
        [cube % nx, (cube / nx) % ny, cube / (nx * ny)]
    }

    /// Vertex ids of a tet, ordered so that the signed volume is positive.
    pub fn tet_vertices(&self, tet: usize) -> Result<[usize; 4]> {
        if tet >= self.n_tets() {
            return Err(Error::Index(format!(
                "tet id {tet} out of range (mesh has {} tets)",
                self.n_tets()
            )));
        }
        let cube = tet / 6;
        let local = tet % 6;
        let c = self.cube_grid(cube);
        let perm = KUHN_PERMS[local];
        // Walk the cube corners along the permuted axes.
        let mut offs = [[0usize; 3]; 4];
        for step in 0..3 {
            offs[step + 1] = offs[step];
            offs[step + 1][perm[step]] += 1;
        }
        if KUHN_ODD[local] {
            offs.swap(1, 2);
        }
        let mut v = [0usize; 4];
        for (dst, o) in v.iter_mut().zip(offs.iter()) {
            *dst = self.vertex_id(c[0] + o[0], c[1] + o[1], c[2] + o[2]);
        }
        Ok(v)
    }

    /// Full geometry (coordinates, P1 basis gradients, volume) for a tet.
    pub fn element_geometry(&self, tet: usize) -> Result<ElementGeometry> {
        let vertices = self.tet_vertices(tet)?;
        let coords = [
            self.vertex_coords(vertices[0]),
            self.vertex_coords(vertices[1]),
            self.vertex_coords(vertices[2]),
            self.vertex_coords(vertices[3]),
        ];
        let m: Mat3 = [
            sub(coords[1], coords[0]),
            sub(coords[2], coords[0]),
            sub(coords[3], coords[0]),
        ];
        // Rows of m are the edge vectors; λ_i = row i of m^{-1} applied to
        // (x - p0) for i = 1..3, so ∇λ_i are the columns of (m^{-1})^T.
        let det = det3(&m);
        let inv = inv3(&m);
        let mut grads = [[0.0; 3]; 4];
        for i in 0..3 {
            grads[i + 1] = [inv[0][i], inv[1][i], inv[2][i]];
        }
        grads[0] = [
            -grads[1][0] - grads[2][0] - grads[3][0],
            -grads[1][1] - grads[2][1] - grads[3][1],
            -grads[1][2] - grads[2][2] - grads[3][2],
        ];
        Ok(ElementGeometry {
            tet,
            vertices,
            coords,
            grads,
            volume: det / 6.0,
        })
    }

    /// Locates `x` in the mesh (closed box). Returns the containing tet and
    /// the barycentric coordinates of `x` in it. Points on shared faces
    /// resolve to the lowest containing tet id.
    pub fn locate_point(&self, x: Vec3) -> Result<(usize, [f64; 4])> {
        match self.locate_in(x, |_| true)? {
            Some(hit) => Ok(hit),
            None => Err(Error::Domain(format!(
                "point {x:?} could not be located in any tet"
            ))),
        }
    }

    /// Like [`locate_point`](Self::locate_point) but only accepts tets for
    /// which `accept` returns true; returns `Ok(None)` when the point lies in
    /// the mesh but every containing tet is rejected.
    pub fn locate_in(
        &self,
        x: Vec3,
        accept: impl Fn(usize) -> bool,
    ) -> Result<Option<(usize, [f64; 4])>> {
        let tol = 1e-12;
        let mut cand: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for a in 0..3 {
            let t = (x[a] - self.box_min[a]) / self.h;
            if t < -tol || t > self.cells[a] as f64 + tol {
                return Err(Error::Domain(format!(
                    "point {x:?} lies outside the box along axis {a}"
                )));
            }
            let i0 = (t.floor() as isize).clamp(0, self.cells[a] as isize - 1);
            for i in (i0 - 1)..=(i0 + 1) {
                if i >= 0
                    && (i as usize) < self.cells[a]
                    && t >= i as f64 - tol
                    && t <= (i + 1) as f64 + tol
                {
                    cand[a].push(i as usize);
                }
            }
        }
        // Candidate cubes in ascending cube id order; local tets ascending.
        // This makes the "lowest tet id wins" rule hold for face ties.
        let mut cubes: Vec<usize> = Vec::with_capacity(8);
        for &ck in &cand[2] {
            for &cj in &cand[1] {
                for &ci in &cand[0] {
                    cubes.push(self.cube_id([ci, cj, ck]));
                }
            }
        }
        cubes.sort_unstable();
        for cube in cubes {
            for local in 0..6 {
                let tet = cube * 6 + local;
                if let Some(bary) = self.barycentric_in(tet, x, 1e-12) {
                    if accept(tet) {
                        return Ok(Some((tet, bary)));
                    }
                }
            }
        }
        Ok(None)
    }

    /// Barycentric coordinates of `x` in `tet` if it lies (within `tol`,
    /// scaled by nothing since barycentrics are dimensionless) inside.
    fn barycentric_in(&self, tet: usize, x: Vec3, tol: f64) -> Option<[f64; 4]> {
        let geo = self.element_geometry(tet).ok()?;
        let d = sub(x, geo.coords[0]);
        let mut b = [0.0f64; 4];
        for i in 1..4 {
            b[i] = geo.grads[i][0] * d[0] + geo.grads[i][1] * d[1] + geo.grads[i][2] * d[2];
        }
        b[0] = 1.0 - b[1] - b[2] - b[3];
        if b.iter().all(|&v| v >= -tol) {
            for v in b.iter_mut() {
                *v = v.clamp(0.0, 1.0);
            }
            Some(b)
        } else {
            None
        }
    }
}
