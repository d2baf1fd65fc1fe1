//! The time loop: build the band and surface for each step, assemble,
//! solve, record diagnostics, and enforce or warn about the scheme's
//! parameter conditions.

use serde::Serialize;

use crate::assembly::{self, QuadSet, RhoPolicy, StabParams, TimeScheme};
use crate::geometry::{self, ActiveRegion, DiscreteSurface, NodalLevelSet};
use crate::mesh::BackgroundMesh;
use crate::problem::{self, ProblemSpec};
use crate::solver::{self, CondMode, ConditionReport, SolverOptions, SolverStats};
use crate::vec3::Vec3;
use crate::{Error, Result};

/// Everything one simulation run needs.
#[derive(Clone)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub h: f64,
    pub dt: f64,
    pub scheme: TimeScheme,
    pub rho_policy: RhoPolicy,
    /// Band width constant c_delta >= 1 (default 2.5).
    pub c_delta: f64,
    pub surface_quad_degree: usize,
    pub volume_quad_degree: usize,
    pub solver: SolverOptions,
    /// Condition-number estimation per step; `None` disables it.
    pub condition_mode: Option<CondMode>,
    pub box_min: Vec3,
    pub box_max: Vec3,
    /// Start BDF2 from the exact solution at t_1 instead of one backward
    /// Euler step (debugging aid; needs an exact solution).
    pub bdf2_exact_start: bool,
    /// Ignore an analytic divergence coefficient and use the
    /// finite-difference route.
    pub force_fd_sigma: bool,
    pub compute_errors: bool,
}

impl RunConfig {
    pub fn new(problem: ProblemSpec, h: f64, dt: f64) -> Self {
        Self {
            problem,
            h,
            dt,
            scheme: TimeScheme::BackwardEuler,
            rho_policy: RhoPolicy::Constant(4.0),
            c_delta: 2.5,
            surface_quad_degree: 4,
            volume_quad_degree: 1,
            solver: SolverOptions::default(),
            condition_mode: None,
            box_min: [-2.0; 3],
            box_max: [2.0; 3],
            bdf2_exact_start: false,
            force_fd_sigma: false,
            compute_errors: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.h > 0.0) {
            return Err(Error::Config(format!("h = {} must be positive", self.h)));
        }
        if !(self.c_delta >= 1.0) {
            return Err(Error::Config(format!(
                "c_delta = {} must be at least 1",
                self.c_delta
            )));
        }
        Ok(())
    }

    /// Resolved stabilization coefficient for a band width delta.
    pub fn rho(&self, delta: f64) -> f64 {
        match self.rho_policy {
            RhoPolicy::Constant(v) => v,
            RhoPolicy::Scaled => self.problem.w_sup + self.problem.nu / (delta + self.h),
        }
    }
}

/// Finite element state at one time level.
#[derive(Debug, Clone)]
pub struct FEState {
    pub time: f64,
    pub region: ActiveRegion,
    /// One coefficient per active dof, in `region.active_dofs` order.
    pub coefficients: Vec<f64>,
    pub levelset: NodalLevelSet,
}

/// Per-step record for the machine-readable run log.
#[derive(Debug, Clone, Serialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub time: f64,
    pub delta: f64,
    pub band_tets: usize,
    pub cut_tets: usize,
    pub dofs: usize,
    pub surface_area: f64,
    /// Measured max |Div_Γh(w^e - w_T^e/2)| over surface quadrature points.
    pub xi_h: f64,
    pub rho: f64,
    /// Set when dt > 1/(4 xi_h): per-step solvability is no longer covered
    /// by the coercivity condition.
    pub dt_coercivity_warning: bool,
    /// Set when dt > (c_delta * sup|w_N|)^{-1}: the band-width/time-step
    /// relation is out of its supported range.
    pub dt_band_warning: bool,
    pub solver: Option<SolverStats>,
    pub condition: Option<ConditionReport>,
    pub l2_error: Option<f64>,
    pub h1_error: Option<f64>,
    /// L2 norm of the discrete solution over the discrete surface.
    pub solution_norm: f64,
}

/// States plus per-step diagnostics of one complete run.
#[derive(Debug, Clone)]
pub struct SolutionHistory {
    pub mesh: BackgroundMesh,
    pub states: Vec<FEState>,
    pub diagnostics: Vec<StepDiagnostics>,
    /// Human-readable warnings collected along the run.
    pub warnings: Vec<String>,
    /// Run decisions worth recording (scheme startup, sigma route, ...).
    pub notes: Vec<String>,
}

/// Minimum extension-layer width for the step advancing to `t_n` (`n >= 1`).
/// Backward Euler covers one step of surface motion, BDF2 two (the state is
/// read again one step later), hence the doubled width over the widened
/// interval.
pub fn step_width(problem: &ProblemSpec, config: &RunConfig, n: usize) -> f64 {
    let dt = config.dt;
    let t_n = n as f64 * dt;
    match config.scheme {
        TimeScheme::BackwardEuler => {
            let lo = (n as f64 - 1.0).max(0.0) * dt;
            config.c_delta * (problem.wn_bound)(lo, t_n) * dt
        }
        TimeScheme::Bdf2 => {
            let lo = (n as f64 - 2.0).max(0.0) * dt;
            2.0 * config.c_delta * (problem.wn_bound)(lo, t_n) * dt
        }
    }
}

fn quadset(config: &RunConfig) -> Result<QuadSet> {
    QuadSet::with_degrees(config.surface_quad_degree, config.volume_quad_degree)
}

fn surface_l2_norm(
    mesh: &BackgroundMesh,
    surface: &DiscreteSurface,
    region: &ActiveRegion,
    coefficients: &[f64],
    quad: &QuadSet,
) -> Result<f64> {
    let mut acc = 0.0;
    for patch in &surface.patches {
        let geo = mesh.element_geometry(patch.tet)?;
        let mut values = [0.0f64; 4];
        for i in 0..4 {
            let dof = region.dof(geo.vertices[i]).ok_or_else(|| {
                Error::Index(format!("vertex {} has no active dof", geo.vertices[i]))
            })?;
            values[i] = coefficients[dof];
        }
        for tri in &patch.triangles {
            for (x_q, w_q) in quad.surface.map_triangle(tri) {
                let d = crate::vec3::sub(x_q, geo.coords[0]);
                let mut u = values[0];
                for i in 1..4 {
                    let lam = crate::vec3::dot(geo.grads[i], d);
                    u += lam * (values[i] - values[0]);
                }
                acc += w_q * u * u;
            }
        }
    }
    Ok(acc.sqrt())
}

/// Builds the state at t_0: band of width c_delta * sup|w_N| * dt around the
/// initial surface, coefficients set to the nodal values of the initial data.
pub fn initialize(
    problem: &ProblemSpec,
    mesh: &BackgroundMesh,
    config: &RunConfig,
) -> Result<(FEState, StepDiagnostics)> {
    config.validate()?;
    let quad = quadset(config)?;
    let dt = config.dt;
    let delta0 = config.c_delta * (problem.wn_bound)(0.0, dt) * dt;
    let ls = NodalLevelSet::interpolate(problem, 0.0, mesh)?;
    let region = geometry::select_active_region(mesh, &ls, delta0)?;
    let surface = geometry::extract_surface(mesh, &ls)?;
    let coefficients: Vec<f64> = region
        .active_dofs
        .iter()
        .map(|&v| (problem.initial)(mesh.vertex_coords(v)))
        .collect();
    let state = FEState {
        time: 0.0,
        region,
        coefficients,
        levelset: ls,
    };
    let (l2_error, h1_error) = if config.compute_errors && problem.exact.is_some() {
        let (l2, h1) = crate::postproc::step_errors(&state, problem, &surface, mesh, &quad.surface)?;
        (Some(l2), Some(h1))
    } else {
        (None, None)
    };
    let xi_h = problem::estimate_xi_h(problem, &surface, 0.0, &quad.surface, 1e-5 * mesh.h())?;
    let solution_norm =
        surface_l2_norm(mesh, &surface, &state.region, &state.coefficients, &quad)?;
    let diag = StepDiagnostics {
        step: 0,
        time: 0.0,
        delta: delta0,
        band_tets: state.region.band.len(),
        cut_tets: state.region.cut.len(),
        dofs: state.region.n_dofs(),
        surface_area: surface.total_area,
        xi_h,
        rho: config.rho(delta0),
        dt_coercivity_warning: false,
        dt_band_warning: false,
        solver: None,
        condition: None,
        l2_error,
        h1_error,
        solution_norm,
    };
    Ok((state, diag))
}

/// Advances the history by one step. Returns the diagnostics of the new step.
pub fn advance(
    mesh: &BackgroundMesh,
    history: &mut SolutionHistory,
    config: &RunConfig,
) -> Result<StepDiagnostics> {
    let problem = &config.problem;
    let n = history.states.len();
    if n == 0 {
        return Err(Error::Config("advance needs an initialized state".into()));
    }
    let dt = config.dt;
    let t_n = n as f64 * dt;
    let quad = quadset(config)?;

    // BDF2 runs one backward Euler startup step (unless the exact start is
    // requested); afterwards two previous states are available.
    let mut scheme = config.scheme;
    if scheme == TimeScheme::Bdf2 && n < 2 {
        scheme = TimeScheme::BackwardEuler;
    }

    let delta = step_width(problem, config, n);
    let ls = NodalLevelSet::interpolate(problem, t_n, mesh)?;
    let region = geometry::select_active_region(mesh, &ls, delta)?;
    let surface = geometry::extract_surface(mesh, &ls)?;
    let rho = config.rho(delta);

    let xi_h = problem::estimate_xi_h(problem, &surface, t_n, &quad.surface, 1e-5 * mesh.h())?;
    let dt_coercivity_warning = xi_h > 0.0 && dt > 0.25 / xi_h;
    if dt_coercivity_warning {
        history.warnings.push(format!(
            "step {n}: dt = {dt} exceeds the coercivity limit 1/(4 xi_h) = {:.4} (xi_h = {xi_h:.4})",
            0.25 / xi_h
        ));
    }
    let wn_now = (problem.wn_bound)((n as f64 - 1.0).max(0.0) * dt, t_n);
    let dt_band_warning = wn_now > 0.0 && dt > 1.0 / (config.c_delta * wn_now);
    if dt_band_warning {
        history.warnings.push(format!(
            "step {n}: dt = {dt} exceeds the band condition limit 1/(c_delta sup|w_N|) = {:.4}",
            1.0 / (config.c_delta * wn_now)
        ));
    }

    let params = StabParams {
        rho,
        policy: config.rho_policy,
        delta,
        scheme,
    };

    let coefficients;
    let mut solver_stats = None;
    let mut condition = None;

    if config.scheme == TimeScheme::Bdf2 && n == 1 && config.bdf2_exact_start {
        let exact = config.problem.exact.as_ref().ok_or_else(|| {
            Error::Capability("exact BDF2 start requires an exact solution".into())
        })?;
        coefficients = region
            .active_dofs
            .iter()
            .map(|&v| exact(mesh.vertex_coords(v), t_n))
            .collect();
    } else {
        let prev_states: Vec<&FEState> = match scheme {
            TimeScheme::BackwardEuler => vec![&history.states[n - 1]],
            TimeScheme::Bdf2 => vec![&history.states[n - 1], &history.states[n - 2]],
        };
        let system = assembly::assemble_system(
            mesh,
            &ls,
            &surface,
            &region,
            problem,
            &prev_states,
            &params,
            dt,
            t_n,
            &quad,
        )?;
        // warm start from the previous coefficients on shared dofs
        let prev = &history.states[n - 1];
        let x0: Vec<f64> = region
            .active_dofs
            .iter()
            .map(|&v| {
                prev.region
                    .dof(v)
                    .map(|d| prev.coefficients[d])
                    .unwrap_or(0.0)
            })
            .collect();
        let (x, stats) = solver::gmres_gs_solve(&system.matrix, &system.rhs, &x0, &config.solver)?;
        if !stats.converged {
            history.warnings.push(format!(
                "step {n}: solver stopped at relative residual {:.3e} after {} iterations",
                stats.residual, stats.iterations
            ));
        }
        if let Some(mode) = config.condition_mode {
            condition = Some(solver::estimate_condition(&system.matrix, mode)?);
        }
        solver_stats = Some(stats);
        coefficients = x;
    }

    let state = FEState {
        time: t_n,
        region,
        coefficients,
        levelset: ls,
    };
    let (l2_error, h1_error) = if config.compute_errors && problem.exact.is_some() {
        let (l2, h1) = crate::postproc::step_errors(&state, problem, &surface, mesh, &quad.surface)?;
        (Some(l2), Some(h1))
    } else {
        (None, None)
    };
    let solution_norm =
        surface_l2_norm(mesh, &surface, &state.region, &state.coefficients, &quad)?;

    let diag = StepDiagnostics {
        step: n,
        time: t_n,
        delta,
        band_tets: state.region.band.len(),
        cut_tets: state.region.cut.len(),
        dofs: state.region.n_dofs(),
        surface_area: surface.total_area,
        xi_h,
        rho,
        dt_coercivity_warning,
        dt_band_warning,
        solver: solver_stats,
        condition,
        l2_error,
        h1_error,
        solution_norm,
    };
    history.states.push(state);
    history.diagnostics.push(diag.clone());
    Ok(diag)
}

/// Runs a full simulation: N = T/dt uniform steps from t = 0.
pub fn run(config: &RunConfig) -> Result<SolutionHistory> {
    config.validate()?;
    let problem = config.problem.clone();
    let config = if config.force_fd_sigma && problem.div_coefficient.is_some() {
        let mut p = problem.clone();
        p.div_coefficient = None;
        let mut c = config.clone();
        c.problem = p;
        c
    } else {
        config.clone()
    };
    let problem = &config.problem;

    let steps_f = problem.final_time / config.dt;
    let steps = steps_f.round();
    if steps < 1.0 || (steps_f - steps).abs() > 1e-9 * steps_f.max(1.0) {
        return Err(Error::Config(format!(
            "final time {} is not an integer multiple of dt = {}",
            problem.final_time, config.dt
        )));
    }
    let steps = steps as usize;

    let mesh = BackgroundMesh::build(config.box_min, config.box_max, config.h)?;
    let (state0, diag0) = initialize(problem, &mesh, &config)?;
    let mut history = SolutionHistory {
        mesh,
        states: vec![state0],
        diagnostics: vec![diag0],
        warnings: Vec::new(),
        notes: Vec::new(),
    };
    history.notes.push(format!(
        "sigma route: {}",
        if problem.div_coefficient.is_some() {
            "analytic"
        } else {
            "finite-difference"
        }
    ));
    if config.scheme == TimeScheme::Bdf2 {
        history.notes.push(
            if config.bdf2_exact_start {
                "BDF2 startup: exact solution injected at t_1".to_string()
            } else {
                "BDF2 startup: one backward Euler step".to_string()
            },
        );
    }
    for _ in 1..=steps {
        advance(&history.mesh.clone(), &mut history, &config)?;
    }
    Ok(history)
}
