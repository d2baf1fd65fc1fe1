//! Per-step assembly of the sparse linear system.
//!
//! The system matrix decomposes as
//!
//! ```text
//! A = M_Γ / (θ Δt) + D + ν L + ρ S + C
//! ```
//!
//! with the surface mass matrix `M_Γ`, the divergence-coefficient matrix
//! `D`, the tangential (surface) stiffness `L`, the normal-gradient volume
//! stabilization `S` over the whole narrow band, and the skew convection
//! part `C`. θ is 1 for backward Euler and 2/3 for BDF2 (leading coefficient
//! 3/(2Δt)). The five parts are kept separately for diagnostics: `C` is skew
//! by construction (each quadrature contribution is written antisymmetrically
//! to (i,j) and (j,i)), and `M_Γ`, `L`, `S` are assembled symmetrically.
//!
//! Surface terms are integrated with a triangle rule over the extracted
//! patches; the stabilization is integrated over whole band tetrahedra where
//! the integrand of P1 functions is constant, so the default one-point rule
//! is exact.

use serde::Serialize;

use crate::geometry::{ActiveRegion, DiscreteSurface, NodalLevelSet, QuadRule};
use crate::mesh::BackgroundMesh;
use crate::problem::{self, ProblemSpec};
use crate::sparse::CsrMatrix;
use crate::timestepper::FEState;
use crate::vec3::{self, Vec3};
use crate::{Error, Result};

/// Time discretization of the material derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TimeScheme {
    BackwardEuler,
    Bdf2,
}

impl TimeScheme {
    /// Coefficient of the mass matrix: 1/Δt or 3/(2Δt).
    pub fn mass_coefficient(&self, dt: f64) -> f64 {
        match self {
            TimeScheme::BackwardEuler => 1.0 / dt,
            TimeScheme::Bdf2 => 1.5 / dt,
        }
    }

    /// Number of previous states the right-hand side needs.
    pub fn history_len(&self) -> usize {
        match self {
            TimeScheme::BackwardEuler => 1,
            TimeScheme::Bdf2 => 2,
        }
    }
}

/// How the stabilization coefficient is chosen per step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum RhoPolicy {
    Constant(f64),
    /// ρ = ‖w‖_∞ + ν / (δ_n + h)
    Scaled,
}

/// Resolved stabilization parameters of one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabParams {
    pub rho: f64,
    pub policy: RhoPolicy,
    pub delta: f64,
    pub scheme: TimeScheme,
}

/// The five matrices of the decomposition, sharing one sparsity pattern.
#[derive(Debug, Clone)]
pub struct SystemParts {
    pub mass: CsrMatrix,
    pub div: CsrMatrix,
    pub stiff: CsrMatrix,
    pub stab: CsrMatrix,
    pub skew: CsrMatrix,
}

/// Assembled system of one time step.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub parts: SystemParts,
    pub mass_coef: f64,
    pub nu: f64,
    pub rho: f64,
}

/// Quadrature rules used by the assembly.
#[derive(Debug, Clone)]
pub struct QuadSet {
    pub surface: QuadRule,
    pub volume: QuadRule,
}

impl QuadSet {
    pub fn with_degrees(surface_degree: usize, volume_degree: usize) -> Result<Self> {
        Ok(Self {
            surface: crate::geometry::reference_quadrature(
                crate::geometry::RefElement::Triangle,
                surface_degree,
            )?,
            volume: crate::geometry::reference_quadrature(
                crate::geometry::RefElement::Tetrahedron,
                volume_degree,
            )?,
        })
    }
}

impl Default for QuadSet {
    fn default() -> Self {
        Self::with_degrees(4, 1).expect("default quadrature degrees are supported")
    }
}

/// Evaluates a finite element state at one point; the point must lie in a
/// tet of the state's band.
pub fn eval_fe_at(state: &FEState, mesh: &BackgroundMesh, x: Vec3) -> Result<f64> {
    let hit = mesh.locate_in(x, |tet| state.region.contains_tet(tet))?;
    match hit {
        Some((tet, bary)) => {
            let verts = mesh.tet_vertices(tet)?;
            let mut val = 0.0;
            for (b, v) in bary.iter().zip(verts.iter()) {
                let dof = state.region.dof(*v).ok_or_else(|| {
                    Error::Index(format!("vertex {v} of band tet {tet} has no dof"))
                })?;
                val += b * state.coefficients[dof];
            }
            Ok(val)
        }
        None => {
            let (tet, _) = mesh.locate_point(x)?;
            Err(Error::BandCoverage {
                tet,
                point: x,
                state_time: state.time,
            })
        }
    }
}

/// P1 evaluation of a state at many points.
pub fn eval_fe_on_points(
    state: &FEState,
    mesh: &BackgroundMesh,
    points: &[Vec3],
) -> Result<Vec<f64>> {
    points.iter().map(|&x| eval_fe_at(state, mesh, x)).collect()
}

/// Assembles matrix parts and right-hand side of one step.
///
/// `prev` holds the previous states, newest first: `[u^{n-1}]` for backward
/// Euler, `[u^{n-1}, u^{n-2}]` for BDF2. The surface quadrature points of
/// the new surface must lie inside the band of every previous state; a
/// violation is reported as a band-coverage error naming the offending tet.
#[allow(clippy::too_many_arguments)]
pub fn assemble_system(
    mesh: &BackgroundMesh,
    ls: &NodalLevelSet,
    surface: &DiscreteSurface,
    region: &ActiveRegion,
    problem: &ProblemSpec,
    prev: &[&FEState],
    params: &StabParams,
    dt: f64,
    t: f64,
    quad: &QuadSet,
) -> Result<LinearSystem> {
    if !(params.rho > 0.0) {
        return Err(Error::Config(format!(
            "stabilization coefficient rho={} must be positive",
            params.rho
        )));
    }
    if prev.len() < params.scheme.history_len() {
        return Err(Error::Config(format!(
            "{:?} needs {} previous states, got {}",
            params.scheme,
            params.scheme.history_len(),
            prev.len()
        )));
    }
    let n = region.n_dofs();
    let mut pattern: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &tet in &region.band {
        let verts = mesh.tet_vertices(tet)?;
        let dofs = dofs_of(region, &verts)?;
        for &i in &dofs {
            for &j in &dofs {
                pattern[i].push(j);
            }
        }
    }
    let zero = CsrMatrix::from_pattern(n, pattern);
    let mut mass = zero.clone();
    let mut div = zero.clone();
    let mut stiff = zero.clone();
    let mut stab = zero.clone();
    let mut skew = zero;
    let mut rhs = vec![0.0; n];

    let fd_step = 1e-5 * mesh.h();
    let mass_coef = params.scheme.mass_coefficient(dt);

    // surface integrals over the extracted patches
    for patch in &surface.patches {
        let geo = mesh.element_geometry(patch.tet)?;
        let dofs = dofs_of(region, &geo.vertices)?;
        let n_h = patch.normal;
        // tangential basis gradients P_h ∇N_i (constant per tet)
        let tangential_grads: [Vec3; 4] = std::array::from_fn(|i| {
            vec3::tangential(geo.grads[i], n_h)
        });
        for tri in &patch.triangles {
            for (x_q, w_q) in quad.surface.map_triangle(tri) {
                // P1 basis values at the quadrature point
                let d = vec3::sub(x_q, geo.coords[0]);
                let mut basis = [0.0f64; 4];
                for i in 1..4 {
                    basis[i] = vec3::dot(geo.grads[i], d);
                }
                basis[0] = 1.0 - basis[1] - basis[2] - basis[3];

                let lift = problem::lifted_fields(problem, x_q, t)?;
                let sigma = problem::divergence_coefficient(problem, x_q, t, n_h, fd_step)?;
                let advect: [f64; 4] =
                    std::array::from_fn(|i| vec3::dot(lift.tangential, tangential_grads[i]));

                for i in 0..4 {
                    for j in i..4 {
                        let m = w_q * basis[i] * basis[j];
                        let l = w_q * vec3::dot(tangential_grads[i], tangential_grads[j]);
                        mass.add_to(dofs[i], dofs[j], m);
                        div.add_to(dofs[i], dofs[j], sigma * m);
                        stiff.add_to(dofs[i], dofs[j], l);
                        if j > i {
                            mass.add_to(dofs[j], dofs[i], m);
                            div.add_to(dofs[j], dofs[i], sigma * m);
                            stiff.add_to(dofs[j], dofs[i], l);
                        }
                        // skew part: one antisymmetric write keeps C + C^T = 0 exact
                        if j > i {
                            let c =
                                0.5 * w_q * (basis[i] * advect[j] - basis[j] * advect[i]);
                            skew.add_to(dofs[i], dofs[j], c);
                            skew.add_to(dofs[j], dofs[i], -c);
                        }
                    }
                }

                // right-hand side: time history plus surface source
                let history = match params.scheme {
                    TimeScheme::BackwardEuler => eval_fe_at(prev[0], mesh, x_q)? / dt,
                    TimeScheme::Bdf2 => {
                        let u1 = eval_fe_at(prev[0], mesh, x_q)?;
                        let u2 = eval_fe_at(prev[1], mesh, x_q)?;
                        (4.0 * u1 - u2) / (2.0 * dt)
                    }
                };
                let load = history + (problem.source)(x_q, t);
                for i in 0..4 {
                    rhs[dofs[i]] += w_q * load * basis[i];
                }
            }
        }
    }

    // volume stabilization over all band tets: (n_h·∇u)(n_h·∇v) with the
    // per-tet normal from the interpolated level set
    for &tet in &region.band {
        let geo = mesh.element_geometry(tet)?;
        let verts = geo.vertices;
        let dofs = dofs_of(region, &verts)?;
        let mut grad_phi = [0.0; 3];
        for i in 0..4 {
            grad_phi = vec3::add(grad_phi, vec3::scale(geo.grads[i], ls.values[verts[i]]));
        }
        let g_norm = vec3::norm(grad_phi);
        if g_norm == 0.0 {
            // constant level set on this tet; no normal direction
            continue;
        }
        let n_h = vec3::scale(grad_phi, 1.0 / g_norm);
        let normal_d: [f64; 4] = std::array::from_fn(|i| vec3::dot(n_h, geo.grads[i]));
        // the integrand is constant for P1; sum the mapped weights
        let weight: f64 = quad.volume.map_tet(&geo.coords, geo.volume).map(|(_, w)| w).sum();
        for i in 0..4 {
            for j in i..4 {
                let s = weight * normal_d[i] * normal_d[j];
                stab.add_to(dofs[i], dofs[j], s);
                if j > i {
                    stab.add_to(dofs[j], dofs[i], s);
                }
            }
        }
    }

    let mut matrix = mass.scaled(mass_coef);
    matrix.add_scaled(1.0, &div);
    matrix.add_scaled(problem.nu, &stiff);
    matrix.add_scaled(params.rho, &stab);
    matrix.add_scaled(1.0, &skew);

    Ok(LinearSystem {
        matrix,
        rhs,
        parts: SystemParts {
            mass,
            div,
            stiff,
            stab,
            skew,
        },
        mass_coef,
        nu: problem.nu,
        rho: params.rho,
    })
}

/// The five matrices of the decomposition, assembled exactly as in
/// [`assemble_system`].
#[allow(clippy::too_many_arguments)]
pub fn assemble_parts(
    mesh: &BackgroundMesh,
    ls: &NodalLevelSet,
    surface: &DiscreteSurface,
    region: &ActiveRegion,
    problem: &ProblemSpec,
    prev: &[&FEState],
    params: &StabParams,
    dt: f64,
    t: f64,
    quad: &QuadSet,
) -> Result<SystemParts> {
    Ok(assemble_system(mesh, ls, surface, region, problem, prev, params, dt, t, quad)?.parts)
}

fn dofs_of(region: &ActiveRegion, verts: &[usize; 4]) -> Result<[usize; 4]> {
    let mut dofs = [0usize; 4];
    for (d, v) in dofs.iter_mut().zip(verts.iter()) {
        *d = region
            .dof(*v)
            .ok_or_else(|| Error::Index(format!("vertex {v} is not an active dof")))?;
    }
    Ok(dofs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{extract_surface, select_active_region};
    use crate::solver;
    use crate::timestepper::FEState;
    use std::sync::Arc;

    struct Setup {
        mesh: BackgroundMesh,
        ls: NodalLevelSet,
        surface: DiscreteSurface,
        region: ActiveRegion,
        problem: ProblemSpec,
    }

    fn steady_setup(h: f64, delta: f64) -> Setup {
        let mesh = BackgroundMesh::build([-2.0; 3], [2.0; 3], h).unwrap();
        let problem = ProblemSpec::steady_sphere(1.0, Arc::new(|_, _| [0.0; 3]), 0.0);
        let ls = NodalLevelSet::interpolate(&problem, 0.0, &mesh).unwrap();
        let surface = extract_surface(&mesh, &ls).unwrap();
        let region = select_active_region(&mesh, &ls, delta).unwrap();
        Setup {
            mesh,
            ls,
            surface,
            region,
            problem,
        }
    }

    fn constant_state(setup: &Setup, value: f64) -> FEState {
        FEState {
            time: 0.0,
            region: setup.region.clone(),
            coefficients: vec![value; setup.region.n_dofs()],
            levelset: setup.ls.clone(),
        }
    }

    fn params() -> StabParams {
        StabParams {
            rho: 4.0,
            policy: RhoPolicy::Constant(4.0),
            delta: 0.1,
            scheme: TimeScheme::BackwardEuler,
        }
    }

    fn assemble_steady(setup: &Setup, prev: &FEState, dt: f64) -> LinearSystem {
        assemble_system(
            &setup.mesh,
            &setup.ls,
            &setup.surface,
            &setup.region,
            &setup.problem,
            &[prev],
            &params(),
            dt,
            0.0,
            &QuadSet::default(),
        )
        .unwrap()
    }

    #[test]
    fn zero_velocity_system_is_symmetric() {
        let setup = steady_setup(0.25, 0.1);
        let prev = constant_state(&setup, 1.0);
        let dt = 0.125;
        let sys = assemble_steady(&setup, &prev, dt);
        assert_eq!(sys.matrix.n(), setup.region.n_dofs());
        assert_eq!(sys.matrix.asymmetry(), 0.0);
        // A·1 = M·1 / dt  (C = D = 0, L·1 = S·1 = 0)
        let ones = vec![1.0; sys.matrix.n()];
        let a1 = sys.matrix.matvec_alloc(&ones);
        let m1 = sys.parts.mass.matvec_alloc(&ones);
        let scale = sys.parts.mass.inf_norm() / dt;
        for i in 0..a1.len() {
            assert!((a1[i] - m1[i] / dt).abs() < 1e-12 * scale);
        }
    }

    #[test]
    fn part_invariants() {
        let setup = steady_setup(0.25, 0.1);
        let prev = constant_state(&setup, 1.0);
        let sys = assemble_steady(&setup, &prev, 0.125);
        let p = &sys.parts;
        assert_eq!(p.skew.asymmetry().max(0.0), 0.0); // exactly skew means C^T = -C
        let mut skew_plus_t = p.skew.clone();
        skew_plus_t.add_scaled(1.0, &p.skew.transpose());
        assert_eq!(skew_plus_t.inf_norm(), 0.0);
        assert_eq!(p.mass.asymmetry(), 0.0);
        assert_eq!(p.stiff.asymmetry(), 0.0);
        assert_eq!(p.stab.asymmetry(), 0.0);
        let ones = vec![1.0; p.stiff.n()];
        let l1 = p.stiff.matvec_alloc(&ones);
        let s1 = p.stab.matvec_alloc(&ones);
        let lscale = p.stiff.inf_norm().max(1.0);
        let sscale = p.stab.inf_norm().max(1.0);
        for i in 0..l1.len() {
            assert!(l1[i].abs() < 1e-12 * lscale, "L·1 row {i}: {}", l1[i]);
            assert!(s1[i].abs() < 1e-12 * sscale, "S·1 row {i}: {}", s1[i]);
        }
    }

    #[test]
    fn constant_solution_reproduced() {
        // prev ≡ 1, w ≡ 0, f ≡ 0: the solve returns exactly the constant
        let setup = steady_setup(0.25, 0.1);
        let prev = constant_state(&setup, 1.0);
        let sys = assemble_steady(&setup, &prev, 0.125);
        let x0 = vec![0.0; sys.matrix.n()];
        let (x, stats) = solver::gmres_gs_solve(
            &sys.matrix,
            &sys.rhs,
            &x0,
            &solver::SolverOptions::default(),
        )
        .unwrap();
        assert!(stats.converged);
        for v in &x {
            assert!((v - 1.0).abs() < 1e-10, "value {v}");
        }
    }

    #[test]
    fn coercive_when_dt_small() {
        let setup = steady_setup(0.25, 0.1);
        let prev = constant_state(&setup, 1.0);
        let sys = assemble_steady(&setup, &prev, 0.125);
        // B = M/dt + D + νL + ρS must be positive definite; w ≡ 0 so the
        // dt ≤ 1/(4 xi_h) condition is vacuous here
        let n = sys.matrix.n();
        let mut b = sys.parts.mass.scaled(sys.mass_coef);
        b.add_scaled(1.0, &sys.parts.div);
        b.add_scaled(sys.nu, &sys.parts.stiff);
        b.add_scaled(sys.rho, &sys.parts.stab);
        let mut seed = 42u64;
        let mut rand = move || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        };
        for _ in 0..100 {
            let x: Vec<f64> = (0..n).map(|_| rand()).collect();
            let bx = b.matvec_alloc(&x);
            let quad: f64 = x.iter().zip(bx.iter()).map(|(a, c)| a * c).sum();
            assert!(quad > 0.0);
        }
    }

    #[test]
    fn stabilization_rule_independent() {
        // for P1 the integrand of S is constant per tet, so the one-point
        // rule matches the degree-2 rule to roundoff
        let setup = steady_setup(0.25, 0.1);
        let prev = constant_state(&setup, 1.0);
        let quad1 = QuadSet::with_degrees(4, 1).unwrap();
        let quad2 = QuadSet::with_degrees(4, 2).unwrap();
        let p = params();
        let s1 = assemble_system(
            &setup.mesh, &setup.ls, &setup.surface, &setup.region, &setup.problem,
            &[&prev], &p, 0.125, 0.0, &quad1,
        )
        .unwrap();
        let s2 = assemble_system(
            &setup.mesh, &setup.ls, &setup.surface, &setup.region, &setup.problem,
            &[&prev], &p, 0.125, 0.0, &quad2,
        )
        .unwrap();
        let scale = s1.parts.stab.inf_norm();
        let mut diff = s1.parts.stab.clone();
        diff.add_scaled(-1.0, &s2.parts.stab);
        assert!(diff.inf_norm() < 1e-13 * scale);
    }

    #[test]
    fn stab_entries_local() {
        let setup = steady_setup(0.5, 0.2);
        let prev = constant_state(&setup, 1.0);
        let sys = assemble_steady(&setup, &prev, 0.125);
        // dofs that share no band tet have no pattern entry, hence S = 0
        let n = setup.region.n_dofs();
        let mut share = vec![std::collections::HashSet::new(); n];
        for &tet in &setup.region.band {
            let verts = setup.mesh.tet_vertices(tet).unwrap();
            let dofs: Vec<usize> = verts
                .iter()
                .map(|v| setup.region.dof(*v).unwrap())
                .collect();
            for &i in &dofs {
                for &j in &dofs {
                    share[i].insert(j);
                }
            }
        }
        for i in (0..n).step_by(17) {
            for j in (0..n).step_by(23) {
                if !share[i].contains(&j) {
                    assert_eq!(sys.parts.stab.get(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn eval_fe_cases() {
        let setup = steady_setup(0.25, 0.1);
        let state = constant_state(&setup, 3.25);
        let vals = eval_fe_on_points(
            &state,
            &setup.mesh,
            &[[1.0, 0.05, 0.02], [0.0, -1.01, 0.0]],
        )
        .unwrap();
        for v in vals {
            assert!((v - 3.25).abs() < 1e-13);
        }
        // nodal interpolant of an affine function evaluates exactly
        let mut affine = state.clone();
        for (c, &v) in affine
            .coefficients
            .iter_mut()
            .zip(setup.region.active_dofs.iter())
        {
            let x = setup.mesh.vertex_coords(v);
            *c = 2.0 * x[0] - x[1] + 0.5 * x[2] + 1.0;
        }
        let x = [0.98, -0.11, 0.07];
        let v = eval_fe_at(&affine, &setup.mesh, x).unwrap();
        assert!((v - (2.0 * x[0] - x[1] + 0.5 * x[2] + 1.0)).abs() < 1e-12);
        // far from the band: coverage error naming a tet
        let err = eval_fe_at(&affine, &setup.mesh, [0.0, 0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::BandCoverage { .. }));
    }

    #[test]
    fn band_coverage_violation_detected() {
        // previous band too thin for the moved surface
        let mesh = BackgroundMesh::build([-2.0; 3], [2.0; 3], 0.25).unwrap();
        let problem = crate::problem::builtin_experiment(1).unwrap();
        let ls0 = NodalLevelSet::interpolate(&problem, 0.0, &mesh).unwrap();
        let region0 = select_active_region(&mesh, &ls0, 0.0).unwrap();
        let prev = FEState {
            time: 0.0,
            region: region0.clone(),
            coefficients: vec![1.0; region0.n_dofs()],
            levelset: ls0.clone(),
        };
        // move the sphere by half a cell: some quadrature points of the new
        // surface leave the zero-width band of the previous state
        let t1 = 0.625; // 0.2 * t = 0.125 = h/2
        let ls1 = NodalLevelSet::interpolate(&problem, t1, &mesh).unwrap();
        let surface1 = extract_surface(&mesh, &ls1).unwrap();
        let region1 = select_active_region(&mesh, &ls1, 0.0).unwrap();
        let err = assemble_system(
            &mesh,
            &ls1,
            &surface1,
            &region1,
            &problem,
            &[&prev],
            &params(),
            t1,
            t1,
            &QuadSet::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::BandCoverage { .. }), "{err}");
    }

    #[test]
    fn bdf2_needs_two_states() {
        let setup = steady_setup(0.5, 0.2);
        let prev = constant_state(&setup, 1.0);
        let mut p = params();
        p.scheme = TimeScheme::Bdf2;
        let err = assemble_system(
            &setup.mesh, &setup.ls, &setup.surface, &setup.region, &setup.problem,
            &[&prev], &p, 0.125, 0.0, &QuadSet::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn matrix_market_dump() {
        let setup = steady_setup(0.5, 0.2);
        let prev = constant_state(&setup, 1.0);
        let sys = assemble_steady(&setup, &prev, 0.125);
        let mm = sys.matrix.to_matrix_market();
        assert!(mm.starts_with("%%MatrixMarket"));
    }
}
