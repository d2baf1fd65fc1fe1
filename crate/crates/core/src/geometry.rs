//! Per-step geometry: level-set interpolation, discrete surface extraction,
//! narrow-band selection, closest-point projection and quadrature rules.
//!
//! The discrete surface is the zero level of the piecewise linear nodal
//! interpolant of the level-set function. Inside each cut tetrahedron this
//! zero set is planar: either one triangle (sign pattern 1|3) or a planar
//! quadrilateral split into two triangles (2|2). Vertices with value
//! exactly zero count as positive, which removes the zoo of degenerate sign
//! cases; patches of negligible area are discarded.

use std::collections::HashMap;

use crate::mesh::{BackgroundMesh, ElementGeometry};
use crate::problem::ProblemSpec;
use crate::vec3::{self, Vec3};
use crate::{Error, Result};

/// Nodal values of the level set at one time instant; plain interpolation,
/// no smoothing or reinitialization.
#[derive(Debug, Clone)]
pub struct NodalLevelSet {
    pub time: f64,
    pub values: Vec<f64>,
}

impl NodalLevelSet {
    /// Interpolates `problem.phi(., t)` at every mesh vertex.
    pub fn interpolate(problem: &ProblemSpec, t: f64, mesh: &BackgroundMesh) -> Result<Self> {
        let n = mesh.n_vertices();
        let mut values = Vec::with_capacity(n);
        for v in 0..n {
            let val = (problem.phi)(mesh.vertex_coords(v), t);
            if !val.is_finite() {
                return Err(Error::Data(format!(
                    "level set is not finite at vertex {v} ({:?})",
                    mesh.vertex_coords(v)
                )));
            }
            values.push(val);
        }
        Ok(Self { time: t, values })
    }

    #[inline]
    fn at(&self, vertex: usize) -> f64 {
        self.values[vertex]
    }
}

/// The planar piece of the discrete surface inside one cut tetrahedron.
#[derive(Debug, Clone)]
pub struct SurfacePatch {
    pub tet: usize,
    /// One triangle for the 1|3 sign pattern, two for 2|2.
    pub triangles: Vec<[Vec3; 3]>,
    /// Unit normal of the (planar) patch, pointing from the negative to the
    /// positive side of the level set.
    pub normal: Vec3,
}

/// Piecewise planar reconstruction of the zero level set.
#[derive(Debug, Clone)]
pub struct DiscreteSurface {
    pub patches: Vec<SurfacePatch>,
    pub total_area: f64,
}

impl DiscreteSurface {
    pub fn area(&self) -> f64 {
        self.total_area
    }
}

/// The active computational region of one time step: the narrow band of
/// tetrahedra, the subset actually cut by the surface, and the active
/// degree-of-freedom numbering (band vertices in ascending id order).
#[derive(Debug, Clone)]
pub struct ActiveRegion {
    /// Sorted tet ids whose level-set range intersects `[-delta, delta]`.
    pub band: Vec<usize>,
    /// Sorted tet ids with a nonempty extracted patch; subset of `band`.
    pub cut: Vec<usize>,
    pub delta: f64,
    /// Sorted vertex ids of all band tets.
    pub active_dofs: Vec<usize>,
    dof_index: HashMap<usize, usize>,
}

impl ActiveRegion {
    pub fn n_dofs(&self) -> usize {
        self.active_dofs.len()
    }

    #[inline]
    pub fn dof(&self, vertex: usize) -> Option<usize> {
        self.dof_index.get(&vertex).copied()
    }

    #[inline]
    pub fn contains_tet(&self, tet: usize) -> bool {
        self.band.binary_search(&tet).is_ok()
    }
}

pub fn triangle_area(tri: &[Vec3; 3]) -> f64 {
    let a = vec3::sub(tri[1], tri[0]);
    let b = vec3::sub(tri[2], tri[0]);
    0.5 * vec3::norm(vec3::cross(a, b))
}

/// Zero-set patch of the linear interpolant inside one tet, or `None` when
/// the tet is not cut (or the cut has negligible area).
fn cut_patch(
    geo: &ElementGeometry,
    vals: [f64; 4],
    area_floor: f64,
) -> Result<Option<(Vec<[Vec3; 3]>, Vec3)>> {
    if vals.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateGeometry(format!(
            "all four level-set values vanish on tet {}",
            geo.tet
        )));
    }
    // value exactly 0 counts as positive
    let neg: Vec<usize> = (0..4).filter(|&i| vals[i] < 0.0).collect();
    if neg.is_empty() || neg.len() == 4 {
        return Ok(None);
    }
    let pos: Vec<usize> = (0..4).filter(|&i| vals[i] >= 0.0).collect();

    let mut grad = [0.0; 3];
    for i in 0..4 {
        grad = vec3::add(grad, vec3::scale(geo.grads[i], vals[i]));
    }
    let g_norm = vec3::norm(grad);
    if g_norm == 0.0 {
        return Ok(None);
    }
    let normal = vec3::scale(grad, 1.0 / g_norm);

    let crossing = |a: usize, b: usize| -> Vec3 {
        // vals[a] < 0 <= vals[b]
        let s = vals[a] / (vals[a] - vals[b]);
        vec3::add(geo.coords[a], vec3::scale(vec3::sub(geo.coords[b], geo.coords[a]), s))
    };

    let mut triangles: Vec<[Vec3; 3]> = Vec::with_capacity(2);
    if neg.len() == 1 || neg.len() == 3 {
        // a single vertex on one side; the cut is the triangle of the three
        // edge crossings, taken in ascending order of the opposite vertex
        let (lone, others) = if neg.len() == 1 {
            (neg[0], &pos)
        } else {
            (pos[0], &neg)
        };
        let pts: Vec<Vec3> = others
            .iter()
            .map(|&o| {
                if vals[lone] < 0.0 {
                    crossing(lone, o)
                } else {
                    crossing(o, lone)
                }
            })
            .collect();
        triangles.push([pts[0], pts[1], pts[2]]);
    } else {
        // 2|2: the four crossings q_ik, q_il, q_jl, q_jk form a planar quad
        // in cyclic order; split along the fixed diagonal q_ik - q_jl. The
        // quad is planar, so the other diagonal integrates identically.
        let (i, j) = (neg[0], neg[1]);
        let (k, l) = (pos[0], pos[1]);
        let q = [crossing(i, k), crossing(i, l), crossing(j, l), crossing(j, k)];
        triangles.push([q[0], q[1], q[2]]);
        triangles.push([q[0], q[2], q[3]]);
    }
    triangles.retain(|t| triangle_area(t) >= area_floor);
    if triangles.is_empty() {
        return Ok(None);
    }
    Ok(Some((triangles, normal)))
}

#[inline]
fn tet_values(mesh: &BackgroundMesh, ls: &NodalLevelSet, tet: usize) -> Result<[f64; 4]> {
    let v = mesh.tet_vertices(tet)?;
    Ok([ls.at(v[0]), ls.at(v[1]), ls.at(v[2]), ls.at(v[3])])
}

/// Extracts the zero level of the nodal interpolant as per-tet planar
/// patches with per-tet unit normals.
pub fn extract_surface(mesh: &BackgroundMesh, ls: &NodalLevelSet) -> Result<DiscreteSurface> {
    let area_floor = 1e-14 * mesh.h() * mesh.h();
    let mut patches = Vec::new();
    let mut total_area = 0.0;
    for tet in 0..mesh.n_tets() {
        let vals = tet_values(mesh, ls, tet)?;
        // cheap sign prefilter before computing element geometry
        let any_neg = vals.iter().any(|&v| v < 0.0);
        let any_pos = vals.iter().any(|&v| v >= 0.0);
        if vals.iter().all(|&v| v == 0.0) {
            return Err(Error::DegenerateGeometry(format!(
                "all four level-set values vanish on tet {tet}"
            )));
        }
        if !(any_neg && any_pos) {
            continue;
        }
        let geo = mesh.element_geometry(tet)?;
        if let Some((triangles, normal)) = cut_patch(&geo, vals, area_floor)? {
            total_area += triangles.iter().map(triangle_area).sum::<f64>();
            patches.push(SurfacePatch {
                tet,
                triangles,
                normal,
            });
        }
    }
    Ok(DiscreteSurface {
        patches,
        total_area,
    })
}

/// Selects the narrow band `{ tets whose phi_h range meets [-delta, delta] }`,
/// the cut subset, and the active dof numbering. For P1 the range of the
/// interpolant on a tet is exactly the min/max of its vertex values.
pub fn select_active_region(
    mesh: &BackgroundMesh,
    ls: &NodalLevelSet,
    delta: f64,
) -> Result<ActiveRegion> {
    if delta < 0.0 {
        return Err(Error::Config(format!("band width delta={delta} < 0")));
    }
    let area_floor = 1e-14 * mesh.h() * mesh.h();
    let mut band = Vec::new();
    let mut cut = Vec::new();
    for tet in 0..mesh.n_tets() {
        let vals = tet_values(mesh, ls, tet)?;
        let mut lo = vals[0];
        let mut hi = vals[0];
        for &v in &vals[1..] {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if lo <= delta && hi >= -delta {
            band.push(tet);
            let any_neg = vals.iter().any(|&v| v < 0.0);
            let any_pos = vals.iter().any(|&v| v >= 0.0);
            if any_neg && any_pos {
                let geo = mesh.element_geometry(tet)?;
                if cut_patch(&geo, vals, area_floor)?.is_some() {
                    cut.push(tet);
                }
            }
        }
    }
    if band.is_empty() {
        return Err(Error::Geometry(
            "narrow band is empty; the surface is outside the mesh box".into(),
        ));
    }
    let mut active_dofs = Vec::with_capacity(4 * band.len());
    for &tet in &band {
        active_dofs.extend_from_slice(&mesh.tet_vertices(tet)?);
    }
    active_dofs.sort_unstable();
    active_dofs.dedup();
    let dof_index = active_dofs
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, i))
        .collect();
    Ok(ActiveRegion {
        band,
        cut,
        delta,
        active_dofs,
        dof_index,
    })
}

/// Closest-point projection onto the exact surface `phi(., t) = 0`.
///
/// Uses the problem's analytic map when present; otherwise a damped
/// fixed-point iteration `x <- x - phi(x) grad/|grad|^2`, at most 50 steps,
/// converged when `|phi| <= 1e-12`.
pub fn closest_point(problem: &ProblemSpec, x: Vec3, t: f64) -> Result<Vec3> {
    if let Some(map) = &problem.closest_point_map {
        return Ok(map(x, t));
    }
    let mut y = x;
    let mut fy = (problem.phi)(y, t);
    for _ in 0..50 {
        if fy.abs() <= 1e-12 {
            return Ok(y);
        }
        let g = (problem.grad_phi)(y, t);
        let g2 = vec3::dot(g, g);
        if g2 < 1e-30 {
            return Err(Error::Projection(format!(
                "level-set gradient vanished near {y:?} during projection"
            )));
        }
        let mut step = vec3::scale(g, -fy / g2);
        let mut candidate = vec3::add(y, step);
        let mut fc = (problem.phi)(candidate, t);
        let mut halvings = 0;
        while fc.abs() > fy.abs() && halvings < 8 {
            step = vec3::scale(step, 0.5);
            candidate = vec3::add(y, step);
            fc = (problem.phi)(candidate, t);
            halvings += 1;
        }
        y = candidate;
        fy = fc;
    }
    if fy.abs() <= 1e-12 {
        Ok(y)
    } else {
        Err(Error::Projection(format!(
            "no convergence after 50 iterations from {x:?} (|phi|={:.3e})",
            fy.abs()
        )))
    }
}

// --- quadrature -----------------------------------------------------------

/// Reference element of a quadrature rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefElement {
    Triangle,
    Tetrahedron,
}

/// Quadrature rule in barycentric coordinates. Weights sum to the reference
/// measure (1/2 for the triangle, 1/6 for the tetrahedron) and integrate all
/// polynomials up to `degree` exactly.
#[derive(Debug, Clone)]
pub struct QuadRule {
    pub element: RefElement,
    pub degree: usize,
    /// Barycentric tuples; triangles use the first three entries.
    pub points: Vec<[f64; 4]>,
    pub weights: Vec<f64>,
}

impl QuadRule {
    /// Maps the rule onto a physical triangle: quadrature points and weights
    /// that sum to the triangle area.
    pub fn map_triangle<'a>(
        &'a self,
        tri: &'a [Vec3; 3],
    ) -> impl Iterator<Item = (Vec3, f64)> + 'a {
        debug_assert_eq!(self.element, RefElement::Triangle);
        let scale = 2.0 * triangle_area(tri);
        self.points.iter().zip(self.weights.iter()).map(move |(b, &w)| {
            let p = [
                b[0] * tri[0][0] + b[1] * tri[1][0] + b[2] * tri[2][0],
                b[0] * tri[0][1] + b[1] * tri[1][1] + b[2] * tri[2][1],
                b[0] * tri[0][2] + b[1] * tri[1][2] + b[2] * tri[2][2],
            ];
            (p, w * scale)
        })
    }

    /// Maps the rule onto a physical tetrahedron given by its 4 vertices.
    pub fn map_tet<'a>(&'a self, coords: &'a [Vec3; 4], volume: f64) -> impl Iterator<Item = (Vec3, f64)> + 'a {
        debug_assert_eq!(self.element, RefElement::Tetrahedron);
        let scale = 6.0 * volume;
        self.points.iter().zip(self.weights.iter()).map(move |(b, &w)| {
            let mut p = [0.0; 3];
            for i in 0..4 {
                p = vec3::add(p, vec3::scale(coords[i], b[i]));
            }
            (p, w * scale)
        })
    }
}

/// Returns a rule with exactness at least `degree`. Supported requests:
/// triangle up to 6, tetrahedron up to 2.
pub fn reference_quadrature(element: RefElement, degree: usize) -> Result<QuadRule> {
    match element {
        RefElement::Triangle => triangle_rule(degree),
        RefElement::Tetrahedron => tet_rule(degree),
    }
}

fn triangle_rule(degree: usize) -> Result<QuadRule> {
    // barycentric points with weights summing to 1, scaled by the reference
    // area 1/2 below
    let (deg, pts, wts): (usize, Vec<[f64; 3]>, Vec<f64>) = match degree {
        0 | 1 => (
            1,
            vec![[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]],
            vec![1.0],
        ),
        2 => {
            let a = 2.0 / 3.0;
            let b = 1.0 / 6.0;
            (
                2,
                vec![[a, b, b], [b, a, b], [b, b, a]],
                vec![1.0 / 3.0; 3],
            )
        }
        3 | 4 => {
            // Dunavant degree 4, 6 points
            let a1 = 0.445948490915965;
            let w1 = 0.223381589678011;
            let a2 = 0.091576213509771;
            let w2 = 0.109951743655322;
            let mut pts = Vec::new();
            let mut wts = Vec::new();
            for (a, w) in [(a1, w1), (a2, w2)] {
                let c = 1.0 - 2.0 * a;
                pts.extend_from_slice(&[[c, a, a], [a, c, a], [a, a, c]]);
                wts.extend_from_slice(&[w, w, w]);
            }
            (4, pts, wts)
        }
        5 | 6 => {
            // Dunavant degree 6, 12 points
            let a1 = 0.063089014491502;
            let w1 = 0.050844906370207;
            let a2 = 0.249286745170910;
            let w2 = 0.116786275726379;
            let a3 = 0.310352451033785;
            let b3 = 0.053145049844816;
            let w3 = 0.082851075618374;
            let mut pts = Vec::new();
            let mut wts = Vec::new();
            for (a, w) in [(a1, w1), (a2, w2)] {
                let c = 1.0 - 2.0 * a;
                pts.extend_from_slice(&[[c, a, a], [a, c, a], [a, a, c]]);
                wts.extend_from_slice(&[w, w, w]);
            }
            let c3 = 1.0 - a3 - b3;
            pts.extend_from_slice(&[
                [c3, a3, b3],
                [c3, b3, a3],
                [a3, c3, b3],
                [a3, b3, c3],
                [b3, c3, a3],
                [b3, a3, c3],
            ]);
            wts.extend_from_slice(&[w3; 6]);
            (6, pts, wts)
        }
        _ => {
            return Err(Error::Config(format!(
                "unsupported triangle quadrature degree {degree} (max 6)"
            )))
        }
    };
    Ok(QuadRule {
        element: RefElement::Triangle,
        degree: deg,
        points: pts.iter().map(|p| [p[0], p[1], p[2], 0.0]).collect(),
        weights: wts.iter().map(|w| w * 0.5).collect(),
    })
}

fn tet_rule(degree: usize) -> Result<QuadRule> {
    let (deg, pts, wts): (usize, Vec<[f64; 4]>, Vec<f64>) = match degree {
        0 | 1 => (1, vec![[0.25; 4]], vec![1.0]),
        2 => {
            let a = (5.0 + 3.0 * 5.0f64.sqrt()) / 20.0;
            let b = (5.0 - 5.0f64.sqrt()) / 20.0;
            (
                2,
                vec![
                    [a, b, b, b],
                    [b, a, b, b],
                    [b, b, a, b],
                    [b, b, b, a],
                ],
                vec![0.25; 4],
            )
        }
        _ => {
            return Err(Error::Config(format!(
                "unsupported tetrahedron quadrature degree {degree} (max 2)"
            )))
        }
    };
    Ok(QuadRule {
        element: RefElement::Tetrahedron,
        degree: deg,
        points: pts,
        weights: wts.iter().map(|w| w / 6.0).collect(),
    })
}

// --- VTK export ------------------------------------------------------------

/// Renders the surface (with optional per-triangle-vertex point data named
/// `u`) as legacy ASCII VTK POLYDATA.
pub fn surface_to_vtk(surface: &DiscreteSurface, point_data: Option<&[f64]>) -> String {
    use std::fmt::Write;
    let n_tris: usize = surface.patches.iter().map(|p| p.triangles.len()).sum();
    let n_pts = 3 * n_tris;
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str("discrete surface\nASCII\nDATASET POLYDATA\n");
    let _ = writeln!(out, "POINTS {n_pts} double");
    for patch in &surface.patches {
        for tri in &patch.triangles {
            for v in tri {
                let _ = writeln!(out, "{:.17e} {:.17e} {:.17e}", v[0], v[1], v[2]);
            }
        }
    }
    let _ = writeln!(out, "POLYGONS {n_tris} {}", 4 * n_tris);
    for i in 0..n_tris {
        let _ = writeln!(out, "3 {} {} {}", 3 * i, 3 * i + 1, 3 * i + 2);
    }
    if let Some(values) = point_data {
        assert_eq!(values.len(), n_pts, "point data length mismatch");
        let _ = writeln!(out, "POINT_DATA {n_pts}");
        out.push_str("SCALARS u double 1\nLOOKUP_TABLE default\n");
        for v in values {
            let _ = writeln!(out, "{v:.17e}");
        }
    }
    out
}
