//! Error norms, EOC tables and text renderers.
//!
//! Per step the L2 and tangential-H1 seminorm errors are integrated over
//! the discrete surface against the exact solution's ambient formula. The
//! space-time norms follow the convergence-study convention: the L2(H1)
//! norm applies the trapezoidal rule in time to the squared full H1 norm
//! (including the step at t = 0 with its interpolation error), and the
//! Linf(L2) norm takes the maximum of the per-step L2 errors over steps
//! n >= 1.
//!
//! EOC values are log2 of coarse-over-fine error ratios, so converging
//! sequences give positive orders.

use serde::Serialize;

use crate::assembly::{RhoPolicy, TimeScheme};
use crate::geometry::{DiscreteSurface, QuadRule};
use crate::mesh::BackgroundMesh;
use crate::problem::ProblemSpec;
use crate::timestepper::{FEState, RunConfig, SolutionHistory};
use crate::vec3::{self, Vec3};
use crate::{Error, Result};

/// L2 and tangential-gradient errors of one state over its surface.
///
/// The comparison target is the normal extension of the exact solution: at
/// a quadrature point x the exact value is u(p(x)) with p the closest-point
/// projection, and the exact surface gradient is P ∇u at p with the exact
/// normal there. Both gradients are then projected with the per-element
/// discrete normal. The exact gradient uses the problem's analytic formula
/// when present and central differences otherwise.
pub fn step_errors(
    state: &FEState,
    problem: &ProblemSpec,
    surface: &DiscreteSurface,
    mesh: &BackgroundMesh,
    rule: &QuadRule,
) -> Result<(f64, f64)> {
    let exact = problem
        .exact
        .as_ref()
        .ok_or_else(|| Error::Capability("error norms need an exact solution".into()))?;
    let t = state.time;
    let grad_exact = |x: Vec3| -> Vec3 {
        match &problem.exact_grad {
            Some(g) => g(x, t),
            None => {
                let step = 1e-6;
                let mut g = [0.0; 3];
                for d in 0..3 {
                    let mut xp = x;
                    let mut xm = x;
                    xp[d] += step;
                    xm[d] -= step;
                    g[d] = (exact(xp, t) - exact(xm, t)) / (2.0 * step);
                }
                g
            }
        }
    };

    let mut l2_sq = 0.0;
    let mut h1_sq = 0.0;
    for patch in &surface.patches {
        let geo = mesh.element_geometry(patch.tet)?;
        let mut coef = [0.0f64; 4];
        for i in 0..4 {
            let dof = state.region.dof(geo.vertices[i]).ok_or_else(|| {
                Error::Index(format!(
                    "vertex {} of cut tet {} is not an active dof",
                    geo.vertices[i], patch.tet
                ))
            })?;
            coef[i] = state.coefficients[dof];
        }
        let mut grad_uh = [0.0; 3];
        for i in 0..4 {
            grad_uh = vec3::add(grad_uh, vec3::scale(geo.grads[i], coef[i]));
        }
        for tri in &patch.triangles {
            for (x_q, w_q) in rule.map_triangle(tri) {
                let d = vec3::sub(x_q, geo.coords[0]);
                let mut u_h = coef[0];
                for i in 1..4 {
                    u_h += vec3::dot(geo.grads[i], d) * (coef[i] - coef[0]);
                }
                let lift = crate::problem::lifted_fields(problem, x_q, t)?;
                let e = u_h - exact(lift.closest, t);
                let grad_surf = vec3::tangential(grad_exact(lift.closest), lift.normal);
                let ge = vec3::tangential(vec3::sub(grad_uh, grad_surf), patch.normal);
                l2_sq += w_q * e * e;
                h1_sq += w_q * vec3::dot(ge, ge);
            }
        }
    }
    Ok((l2_sq.sqrt(), h1_sq.sqrt()))
}

/// Space-time error norms of one run plus its parameters.
#[derive(Debug, Clone, Serialize)]
pub struct ErrorReport {
    pub h: f64,
    pub dt: f64,
    pub scheme: TimeScheme,
    pub rho_policy: RhoPolicy,
    /// sqrt of the time-trapezoid of (L2 error^2 + tangential H1 error^2).
    pub l2h1: f64,
    /// max over steps n >= 1 of the per-step L2 error.
    pub linf_l2: f64,
    pub per_step_l2: Vec<f64>,
    pub per_step_h1: Vec<f64>,
}

/// Aggregates recorded per-step errors into the two table norms.
pub fn aggregate_norms(history: &SolutionHistory, config: &RunConfig) -> Result<ErrorReport> {
    let n = history.diagnostics.len();
    if n < 2 {
        return Err(Error::Config(
            "aggregation needs at least one completed time step".into(),
        ));
    }
    let mut per_step_l2 = Vec::with_capacity(n);
    let mut per_step_h1 = Vec::with_capacity(n);
    for d in &history.diagnostics {
        let l2 = d.l2_error.ok_or_else(|| {
            Error::Capability(format!("step {} has no recorded error", d.step))
        })?;
        let h1 = d.h1_error.ok_or_else(|| {
            Error::Capability(format!("step {} has no recorded error", d.step))
        })?;
        per_step_l2.push(l2);
        per_step_h1.push(h1);
    }
    let dt = config.dt;
    let squared: Vec<f64> = per_step_l2
        .iter()
        .zip(per_step_h1.iter())
        .map(|(a, b)| a * a + b * b)
        .collect();
    let mut integral = 0.5 * (squared[0] + squared[n - 1]);
    for v in &squared[1..n - 1] {
        integral += v;
    }
    integral *= dt;
    let linf_l2 = per_step_l2[1..].iter().cloned().fold(0.0, f64::max);
    Ok(ErrorReport {
        h: config.h,
        dt,
        scheme: config.scheme,
        rho_policy: config.rho_policy,
        l2h1: integral.sqrt(),
        linf_l2,
        per_step_l2,
        per_step_h1,
    })
}

/// Experimental order of convergence between two successive errors, as
/// log2(coarse/fine); positive for converging refinements.
pub fn eoc(e_coarse: f64, e_fine: f64) -> Result<f64> {
    if !(e_coarse > 0.0) || !(e_fine > 0.0) {
        return Err(Error::Domain(format!(
            "eoc needs positive errors, got {e_coarse} and {e_fine}"
        )));
    }
    Ok((e_coarse / e_fine).log2())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NormKind {
    L2H1,
    LinfL2,
}

/// One convergence-grid cell; `failed` cells keep their place in the table.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CellResult {
    pub l2h1: f64,
    pub linf_l2: f64,
    pub failed: bool,
}

/// Grid of errors over (dt-level, h-level) with derived EOC rows/columns
/// for one designated norm.
#[derive(Debug, Clone)]
pub struct EocTable {
    pub norm: NormKind,
    pub h_levels: Vec<f64>,
    pub dt_levels: Vec<f64>,
    /// cells[dt index][h index]
    pub cells: Vec<Vec<Option<CellResult>>>,
}

impl EocTable {
    pub fn new(norm: NormKind, h_levels: Vec<f64>, dt_levels: Vec<f64>) -> Self {
        let cells = vec![vec![None; h_levels.len()]; dt_levels.len()];
        Self {
            norm,
            h_levels,
            dt_levels,
            cells,
        }
    }

    pub fn set(&mut self, dt_index: usize, h_index: usize, cell: CellResult) {
        self.cells[dt_index][h_index] = Some(cell);
    }

    fn value(&self, dt_index: usize, h_index: usize) -> Option<f64> {
        self.cells[dt_index][h_index].and_then(|c| {
            if c.failed {
                None
            } else {
                Some(match self.norm {
                    NormKind::L2H1 => c.l2h1,
                    NormKind::LinfL2 => c.linf_l2,
                })
            }
        })
    }

    /// EOC per h column at the finest time level; first entry undefined.
    pub fn eoc_x(&self) -> Vec<Option<f64>> {
        let last = self.dt_levels.len() - 1;
        (0..self.h_levels.len())
            .map(|j| {
                if j == 0 {
                    None
                } else {
                    let coarse = self.value(last, j - 1)?;
                    let fine = self.value(last, j)?;
                    eoc(coarse, fine).ok()
                }
            })
            .collect()
    }

    /// EOC per dt row at the finest space level; first entry undefined.
    pub fn eoc_t(&self) -> Vec<Option<f64>> {
        let last = self.h_levels.len() - 1;
        (0..self.dt_levels.len())
            .map(|i| {
                if i == 0 {
                    None
                } else {
                    let coarse = self.value(i - 1, last)?;
                    let fine = self.value(i, last)?;
                    eoc(coarse, fine).ok()
                }
            })
            .collect()
    }

    /// EOC along the diagonal (simultaneous refinement); first entry
    /// undefined. Only meaningful when h and dt are refined together.
    pub fn eoc_diag(&self) -> Vec<Option<f64>> {
        let len = self.h_levels.len().min(self.dt_levels.len());
        (0..len)
            .map(|k| {
                if k == 0 {
                    None
                } else {
                    let coarse = self.value(k - 1, k - 1)?;
                    let fine = self.value(k, k)?;
                    eoc(coarse, fine).ok()
                }
            })
            .collect()
    }

    /// Uniform time-refinement factor between successive dt levels, if any.
    fn time_factor(&self) -> Option<f64> {
        if self.dt_levels.len() < 2 {
            return None;
        }
        let f = self.dt_levels[0] / self.dt_levels[1];
        for w in self.dt_levels.windows(2) {
            if ((w[0] / w[1]) - f).abs() > 1e-9 * f {
                return None;
            }
        }
        Some(f)
    }

    /// Whether the diagonal corresponds to dt ~ h (factor 2 per level,
    /// rendered as eoc_xt) or dt ~ h^2 (factor 4, eoc_xtt).
    pub fn diag_is_xtt(&self) -> Option<bool> {
        let f = self.time_factor()?;
        if (f - 2.0).abs() < 1e-9 {
            Some(false)
        } else if (f - 4.0).abs() < 1e-9 {
            Some(true)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderFormat {
    Csv,
    Markdown,
}

fn sig(v: f64) -> String {
    format!("{v:.11e}")
}

fn sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let mag = v.abs().log10().floor() as i32;
    let decimals = (5 - mag).max(0) as usize;
    format!("{v:.decimals$}")
}

/// Renders the table. The CSV layout is one row per grid cell with columns
/// `h, dt, l2h1, linf_l2, eoc_x, eoc_t, eoc_xt, eoc_xtt`; EOC entries appear
/// on the rows where they are defined (finest dt for eoc_x, finest h for
/// eoc_t, the diagonal for eoc_xt/eoc_xtt) and stay empty elsewhere. The
/// Markdown layout mirrors the error-matrix shape of the convergence tables.
pub fn render(table: &EocTable, format: RenderFormat) -> String {
    match format {
        RenderFormat::Csv => render_csv(table),
        RenderFormat::Markdown => render_markdown(table),
    }
}

fn render_csv(table: &EocTable) -> String {
    let mut out = String::from("h,dt,l2h1,linf_l2,eoc_x,eoc_t,eoc_xt,eoc_xtt\n");
    let eoc_x = table.eoc_x();
    let eoc_t = table.eoc_t();
    let diag = table.eoc_diag();
    let diag_is_xtt = table.diag_is_xtt();
    let last_dt = table.dt_levels.len() - 1;
    let last_h = table.h_levels.len() - 1;
    for (i, &dt) in table.dt_levels.iter().enumerate() {
        for (j, &h) in table.h_levels.iter().enumerate() {
            let mut fields: Vec<String> = vec![sig(h), sig(dt)];
            match table.cells[i][j] {
                Some(c) if !c.failed => {
                    fields.push(sig(c.l2h1));
                    fields.push(sig(c.linf_l2));
                }
                Some(_) => {
                    fields.push("failed".into());
                    fields.push("failed".into());
                }
                None => {
                    fields.push(String::new());
                    fields.push(String::new());
                }
            }
            let ex = if i == last_dt { eoc_x[j] } else { None };
            let et = if j == last_h { eoc_t[i] } else { None };
            let (ext, extt) = if i == j && i < diag.len() {
                match diag_is_xtt {
                    Some(false) => (diag[i], None),
                    Some(true) => (None, diag[i]),
                    None => (None, None),
                }
            } else {
                (None, None)
            };
            for v in [ex, et, ext, extt] {
                fields.push(v.map(sig).unwrap_or_default());
            }
            out.push_str(&fields.join(","));
            out.push('\n');
        }
    }
    out
}

fn render_markdown(table: &EocTable) -> String {
    use std::fmt::Write;
    let norm_name = match table.norm {
        NormKind::L2H1 => "L2(H1)",
        NormKind::LinfL2 => "Linf(L2)",
    };
    let diag_name = match table.diag_is_xtt() {
        Some(true) => "eoc_xtt",
        Some(false) => "eoc_xt",
        None => "eoc_diag",
    };
    let mut out = String::new();
    let _ = writeln!(out, "{norm_name} error");
    let mut header = String::from("| dt \\ h |");
    for h in &table.h_levels {
        header.push_str(&format!(" {} |", sig6(*h)));
    }
    header.push_str(" eoc_t |");
    let _ = writeln!(out, "{header}");
    let mut rule = String::from("|---|");
    for _ in 0..table.h_levels.len() {
        rule.push_str("---|");
    }
    rule.push_str("---|");
    let _ = writeln!(out, "{rule}");
    let eoc_t = table.eoc_t();
    for (i, &dt) in table.dt_levels.iter().enumerate() {
        let mut row = format!("| {} |", sig6(dt));
        for j in 0..table.h_levels.len() {
            let cell = match table.cells[i][j] {
                Some(c) if !c.failed => sig6(match table.norm {
                    NormKind::L2H1 => c.l2h1,
                    NormKind::LinfL2 => c.linf_l2,
                }),
                Some(_) => "failed".into(),
                None => String::new(),
            };
            row.push_str(&format!(" {cell} |"));
        }
        row.push_str(&format!(
            " {} |",
            eoc_t[i].map(sig6).unwrap_or_default()
        ));
        let _ = writeln!(out, "{row}");
    }
    let mut xrow = String::from("| eoc_x |");
    for v in table.eoc_x() {
        xrow.push_str(&format!(" {} |", v.map(sig6).unwrap_or_default()));
    }
    xrow.push_str("  |");
    let _ = writeln!(out, "{xrow}");
    let diag = table.eoc_diag();
    let mut drow = format!("| {diag_name} |");
    for j in 0..table.h_levels.len() {
        let v = if j < diag.len() { diag[j] } else { None };
        drow.push_str(&format!(" {} |", v.map(sig6).unwrap_or_default()));
    }
    drow.push_str("  |");
    let _ = writeln!(out, "{drow}");
    out
}

/// One parsed CSV data row (for round-trip checks and downstream tooling).
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub h: f64,
    pub dt: f64,
    pub l2h1: Option<f64>,
    pub linf_l2: Option<f64>,
    pub eoc_x: Option<f64>,
    pub eoc_t: Option<f64>,
    pub eoc_xt: Option<f64>,
    pub eoc_xtt: Option<f64>,
}

/// Parses CSV produced by [`render`].
pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data("empty CSV".into()))?;
    if header != "h,dt,l2h1,linf_l2,eoc_x,eoc_t,eoc_xt,eoc_xtt" {
        return Err(Error::Data(format!("unexpected CSV header '{header}'")));
    }
    let opt = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() || s == "failed" {
            Ok(None)
        } else {
            s.parse::<f64>()
                .map(Some)
                .map_err(|_| Error::Data(format!("bad number '{s}' in CSV")))
        }
    };
    let mut rows = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(Error::Data(format!("bad CSV row '{line}'")));
        }
        rows.push(CsvRow {
            h: f[0]
                .parse()
                .map_err(|_| Error::Data(format!("bad h '{}'", f[0])))?,
            dt: f[1]
                .parse()
                .map_err(|_| Error::Data(format!("bad dt '{}'", f[1])))?,
            l2h1: opt(f[2])?,
            linf_l2: opt(f[3])?,
            eoc_x: opt(f[4])?,
            eoc_t: opt(f[5])?,
            eoc_xt: opt(f[6])?,
            eoc_xtt: opt(f[7])?,
        });
    }
    Ok(rows)
}

/// Surface with the discrete solution sampled at the patch-triangle corners,
/// as VTK POLYDATA with a point data field `u`.
pub fn surface_solution_vtk(
    mesh: &BackgroundMesh,
    state: &FEState,
    surface: &DiscreteSurface,
) -> Result<String> {
    let mut values = Vec::new();
    for patch in &surface.patches {
        let geo = mesh.element_geometry(patch.tet)?;
        let mut coef = [0.0f64; 4];
        for i in 0..4 {
            let dof = state.region.dof(geo.vertices[i]).ok_or_else(|| {
                Error::Index(format!("vertex {} has no active dof", geo.vertices[i]))
            })?;
            coef[i] = state.coefficients[dof];
        }
        for tri in &patch.triangles {
            for corner in tri {
                let d = vec3::sub(*corner, geo.coords[0]);
                let mut u = coef[0];
                for i in 1..4 {
                    u += vec3::dot(geo.grads[i], d) * (coef[i] - coef[0]);
                }
                values.push(u);
            }
        }
    }
    Ok(crate::geometry::surface_to_vtk(surface, Some(&values)))
}
