//! Command-line runner: single simulations, convergence studies,
//! condition-number sweeps, and the merging-spheres demo.
//!
//! Exit codes: 0 success, 2 completed with warnings, 1 failure.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use evolfem::assembly::{QuadSet, RhoPolicy, StabParams, TimeScheme};
use evolfem::geometry::{self, NodalLevelSet};
use evolfem::mesh::BackgroundMesh;
use evolfem::postproc::{self, CellResult, EocTable, NormKind, RenderFormat};
use evolfem::problem::{builtin_experiment, ProblemSpec};
use evolfem::solver::{CondMode, SolverOptions};
use evolfem::timestepper::{self, RunConfig, SolutionHistory};

#[derive(Parser)]
#[command(
    name = "evolfem",
    about = "Stabilized TraceFEM for transport-diffusion on evolving level-set surfaces",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// One simulation; writes an error report and a per-step log.
    Run(RunArgs),
    /// Grid of simulations over h and dt levels with EOC tables.
    Convergence(GridArgs),
    /// Grid of simulations reporting the maximum condition number per cell.
    Condition(GridArgs),
    /// Qualitative demo (defaults to the merging-spheres problem) with
    /// optional VTK surface output.
    Demo(DemoArgs),
}

#[derive(Args, Clone, Default)]
struct CommonArgs {
    /// Built-in experiment id (1..4).
    #[arg(long)]
    experiment: Option<u32>,
    /// Problem definition file (key = value with expressions).
    #[arg(long)]
    problem: Option<PathBuf>,
    /// Flat key = value configuration file; command-line flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Time scheme: be | bdf2.
    #[arg(long)]
    scheme: Option<String>,
    /// Stabilization policy: const:<value> | scaled.
    #[arg(long)]
    rho: Option<String>,
    /// Narrow-band constant c_delta (>= 1).
    #[arg(long)]
    c_delta: Option<f64>,
    /// Surface quadrature degree (default 4).
    #[arg(long)]
    quad_surface: Option<usize>,
    /// Volume quadrature degree (default 1).
    #[arg(long)]
    quad_volume: Option<usize>,
    /// GMRES relative tolerance (default 1e-15).
    #[arg(long)]
    tol: Option<f64>,
    /// GMRES iteration cap (default 1000).
    #[arg(long)]
    max_iter: Option<usize>,
    /// GMRES restart length (default 200).
    #[arg(long)]
    restart: Option<usize>,
    /// Ignore an analytic divergence coefficient, forcing the
    /// finite-difference route: auto | fd.
    #[arg(long)]
    sigma: Option<String>,
    /// Estimate condition numbers per step: auto | dense | iterative.
    #[arg(long)]
    condition: Option<String>,
    /// Output directory (default ./out/<command>-<timestamp>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Export the final surface (run) or surface series (demo) as VTK.
    #[arg(long, default_value_t = false)]
    vtk: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Cube side length of the background mesh.
    #[arg(long)]
    h: Option<f64>,
    /// Time step size.
    #[arg(long)]
    dt: Option<f64>,
    /// Dump the first time step's system matrix in Matrix Market format.
    #[arg(long, default_value_t = false)]
    dump_matrix: bool,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated mesh sizes, e.g. 0.5,0.25,0.125.
    #[arg(long, value_delimiter = ',')]
    h_levels: Vec<f64>,
    /// Comma-separated time steps, e.g. 0.125,0.03125.
    #[arg(long, value_delimiter = ',')]
    dt_levels: Vec<f64>,
}

#[derive(Args)]
struct DemoArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    h: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    /// Write a VTK surface snapshot every N steps (default 1 with --vtk).
    #[arg(long)]
    vtk_every: Option<usize>,
}

fn main() {
    let cli = Cli::parse();
    let code = match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            1
        }
    };
    std::process::exit(code);
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Convergence(args) => cmd_grid(args, GridKind::Convergence),
        Command::Condition(args) => cmd_grid(args, GridKind::Condition),
        Command::Demo(args) => cmd_demo(args),
    }
}

// --- configuration resolution -----------------------------------------------

/// Key/value pairs from a flat config file, with `[section]` prefixes
/// flattened to `section.key`.
fn load_config(path: &Path) -> Result<HashMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))?;
    let mut map = HashMap::new();
    let mut section = String::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected key = value", lineno + 1))?;
        let key = if section.is_empty() {
            k.trim().to_string()
        } else {
            format!("{section}.{}", k.trim())
        };
        map.insert(key, v.trim().to_string());
    }
    Ok(map)
}

struct Resolver {
    file: HashMap<String, String>,
    section: String,
}

impl Resolver {
    fn new(common: &CommonArgs, section: &str) -> Result<Self> {
        let file = match &common.config {
            Some(path) => load_config(path)?,
            None => HashMap::new(),
        };
        Ok(Self {
            file,
            section: section.to_string(),
        })
    }

    fn lookup(&self, key: &str) -> Option<&String> {
        self.file
            .get(&format!("{}.{key}", self.section))
            .or_else(|| self.file.get(key))
    }

    /// CLI flag wins, then the config file, then the default.
    fn get<T: std::str::FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.lookup(key) {
            Some(text) => text
                .parse::<T>()
                .map(Some)
                .map_err(|_| anyhow!("config key '{key}': cannot parse '{text}'")),
            None => Ok(None),
        }
    }

    fn require<T: std::str::FromStr>(&self, flag: Option<T>, key: &str) -> Result<T> {
        self.get(flag, key)?
            .ok_or_else(|| anyhow!("missing required parameter '{key}' (flag --{})", key.replace('_', "-")))
    }
}

fn parse_scheme(text: &str) -> Result<TimeScheme> {
    match text.to_ascii_lowercase().as_str() {
        "be" | "euler" | "backward-euler" => Ok(TimeScheme::BackwardEuler),
        "bdf2" => Ok(TimeScheme::Bdf2),
        other => bail!("unknown scheme '{other}', expected be | bdf2"),
    }
}

fn parse_rho(text: &str) -> Result<RhoPolicy> {
    let lower = text.to_ascii_lowercase();
    if lower == "scaled" {
        return Ok(RhoPolicy::Scaled);
    }
    if let Some(v) = lower.strip_prefix("const:") {
        let value: f64 = v
            .parse()
            .map_err(|_| anyhow!("bad stabilization constant '{v}'"))?;
        return Ok(RhoPolicy::Constant(value));
    }
    bail!("unknown rho policy '{text}', expected const:<value> | scaled")
}

fn parse_cond(text: &str) -> Result<CondMode> {
    match text.to_ascii_lowercase().as_str() {
        "auto" | "on" | "true" => Ok(CondMode::Auto),
        "dense" => Ok(CondMode::Dense),
        "iterative" => Ok(CondMode::Iterative),
        other => bail!("unknown condition mode '{other}'"),
    }
}

fn build_problem(common: &CommonArgs, resolver: &Resolver) -> Result<ProblemSpec> {
    if let Some(path) = &common.problem {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading problem file {}", path.display()))?;
        return Ok(ProblemSpec::from_config_str(&text)?);
    }
    let experiment: Option<u32> = resolver.get(common.experiment, "experiment")?;
    if let Some(id) = experiment {
        return Ok(builtin_experiment(id)?);
    }
    if let Some(path) = resolver.lookup("problem") {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading problem file {path}"))?;
        return Ok(ProblemSpec::from_config_str(&text)?);
    }
    bail!("no problem given: pass --experiment <1..4> or --problem <file>")
}

fn build_run_config(
    common: &CommonArgs,
    resolver: &Resolver,
    h: f64,
    dt: f64,
) -> Result<RunConfig> {
    let problem = build_problem(common, resolver)?;
    let mut config = RunConfig::new(problem, h, dt);
    if let Some(text) = resolver.get(common.scheme.clone(), "scheme")? {
        config.scheme = parse_scheme(&text)?;
    }
    if let Some(text) = resolver.get(common.rho.clone(), "rho")? {
        config.rho_policy = parse_rho(&text)?;
    }
    if let Some(v) = resolver.get(common.c_delta, "c_delta")? {
        config.c_delta = v;
    }
    if let Some(v) = resolver.get(common.quad_surface, "quad_surface")? {
        config.surface_quad_degree = v;
    }
    if let Some(v) = resolver.get(common.quad_volume, "quad_volume")? {
        config.volume_quad_degree = v;
    }
    let mut solver = SolverOptions::default();
    if let Some(v) = resolver.get(common.tol, "tol")? {
        solver.tol = v;
    }
    if let Some(v) = resolver.get(common.max_iter, "max_iter")? {
        solver.max_iter = v;
    }
    if let Some(v) = resolver.get(common.restart, "restart")? {
        solver.restart = v;
    }
    config.solver = solver;
    if let Some(text) = resolver.get(common.sigma.clone(), "sigma")? {
        match text.to_ascii_lowercase().as_str() {
            "fd" => config.force_fd_sigma = true,
            "auto" => config.force_fd_sigma = false,
            other => bail!("unknown sigma mode '{other}', expected auto | fd"),
        }
    }
    if let Some(text) = resolver.get(common.condition.clone(), "condition")? {
        config.condition_mode = Some(parse_cond(&text)?);
    }
    Ok(config)
}

// --- output helpers ----------------------------------------------------------

fn output_dir(common: &CommonArgs, resolver: &Resolver, command: &str) -> Result<PathBuf> {
    let dir = match resolver.get(common.out.clone(), "out")? {
        Some(d) => d,
        None => {
            let stamp = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            PathBuf::from(format!("out/{command}-{stamp}"))
        }
    };
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

/// Atomic write: temporary file in the same directory, then rename, so an
/// interrupted sweep never leaves a truncated file.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    std::fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path)
        .with_context(|| format!("renaming {} to {}", tmp.display(), path.display()))?;
    Ok(())
}

fn run_metadata(config: &RunConfig, history: &SolutionHistory) -> serde_json::Value {
    serde_json::json!({
        "problem": config.problem.name,
        "nu": config.problem.nu,
        "final_time": config.problem.final_time,
        "h": config.h,
        "dt": config.dt,
        "scheme": config.scheme,
        "rho_policy": config.rho_policy,
        "c_delta": config.c_delta,
        "quad_surface_degree": config.surface_quad_degree,
        "quad_volume_degree": config.volume_quad_degree,
        "solver": config.solver,
        "sigma_route": if config.problem.div_coefficient.is_some() && !config.force_fd_sigma {
            "analytic"
        } else {
            "finite-difference"
        },
        "xi_reference": config.problem.xi_ref,
        "bdf2_startup": "one backward Euler step",
        "eoc_convention": "log2(coarse/fine)",
        "time_aggregation": "trapezoid of the squared full H1 norm, t0 included",
        "linf_aggregation": "max of per-step L2 errors over steps >= 1",
        "notes": history.notes,
        "warnings": history.warnings,
    })
}

fn steps_jsonl(history: &SolutionHistory) -> String {
    let mut out = String::new();
    for d in &history.diagnostics {
        out.push_str(&serde_json::to_string(d).expect("diagnostics serialize"));
        out.push('\n');
    }
    out
}

// --- commands ----------------------------------------------------------------

fn cmd_run(args: RunArgs) -> Result<i32> {
    let resolver = Resolver::new(&args.common, "run")?;
    let h: f64 = resolver.require(args.h, "h")?;
    let dt: f64 = resolver.require(args.dt, "dt")?;
    let config = build_run_config(&args.common, &resolver, h, dt)?;
    let out = output_dir(&args.common, &resolver, "run")?;

    let history = timestepper::run(&config)?;

    write_atomic(&out.join("steps.jsonl"), &steps_jsonl(&history))?;
    write_atomic(
        &out.join("run.json"),
        &serde_json::to_string_pretty(&run_metadata(&config, &history))?,
    )?;

    if config.problem.exact.is_some() {
        let report = postproc::aggregate_norms(&history, &config)?;
        let mut table = EocTable::new(NormKind::L2H1, vec![config.h], vec![config.dt]);
        table.set(
            0,
            0,
            CellResult {
                l2h1: report.l2h1,
                linf_l2: report.linf_l2,
                failed: false,
            },
        );
        write_atomic(&out.join("report.csv"), &postproc::render(&table, RenderFormat::Csv))?;
        println!(
            "{}: h={} dt={} l2h1={:.6} linf_l2={:.6}",
            config.problem.name, config.h, config.dt, report.l2h1, report.linf_l2
        );
    } else {
        println!(
            "{}: h={} dt={} ({} steps, no exact solution, norms not reported)",
            config.problem.name,
            config.h,
            config.dt,
            history.states.len() - 1
        );
    }

    if args.common.vtk {
        let state = history.states.last().unwrap();
        let surface = geometry::extract_surface(&history.mesh, &state.levelset)?;
        let text = postproc::surface_solution_vtk(&history.mesh, state, &surface)?;
        write_atomic(&out.join("surface_final.vtk"), &text)?;
    }

    if args.dump_matrix {
        let mm = first_step_matrix(&config)?;
        write_atomic(&out.join("system_step1.mtx"), &mm)?;
    }

    for w in &history.warnings {
        eprintln!("warning: {w}");
    }
    println!("outputs in {}", out.display());
    Ok(if history.warnings.is_empty() { 0 } else { 2 })
}

/// Reassembles the first time step's system for inspection.
fn first_step_matrix(config: &RunConfig) -> Result<String> {
    let problem = &config.problem;
    let mesh = BackgroundMesh::build(config.box_min, config.box_max, config.h)?;
    let (state0, _) = timestepper::initialize(problem, &mesh, config)?;
    let dt = config.dt;
    let delta = timestepper::step_width(problem, config, 1);
    let ls = NodalLevelSet::interpolate(problem, dt, &mesh)?;
    let region = geometry::select_active_region(&mesh, &ls, delta)?;
    let surface = geometry::extract_surface(&mesh, &ls)?;
    let quad = QuadSet::with_degrees(config.surface_quad_degree, config.volume_quad_degree)?;
    let params = StabParams {
        rho: config.rho(delta),
        policy: config.rho_policy,
        delta,
        scheme: TimeScheme::BackwardEuler,
    };
    let system = evolfem::assembly::assemble_system(
        &mesh, &ls, &surface, &region, problem, &[&state0], &params, dt, dt, &quad,
    )?;
    Ok(system.matrix.to_matrix_market())
}

enum GridKind {
    Convergence,
    Condition,
}

struct CellOutcome {
    report: Option<postproc::ErrorReport>,
    max_kappa: Option<f64>,
    max_bound: Option<f64>,
    warnings: usize,
    error: Option<String>,
}

fn cmd_grid(args: GridArgs, kind: GridKind) -> Result<i32> {
    let section = match kind {
        GridKind::Convergence => "convergence",
        GridKind::Condition => "condition",
    };
    let resolver = Resolver::new(&args.common, section)?;
    let mut h_levels = args.h_levels.clone();
    if h_levels.is_empty() {
        if let Some(text) = resolver.lookup("h_levels") {
            h_levels = parse_levels(text)?;
        }
    }
    let mut dt_levels = args.dt_levels.clone();
    if dt_levels.is_empty() {
        if let Some(text) = resolver.lookup("dt_levels") {
            dt_levels = parse_levels(text)?;
        }
    }
    if h_levels.is_empty() || dt_levels.is_empty() {
        bail!("grid commands need --h-levels and --dt-levels");
    }
    let out = output_dir(&args.common, &resolver, section)?;

    // all grid cells, run by a small worker pool; each cell is independent
    let cells: Vec<(usize, usize)> = (0..dt_levels.len())
        .flat_map(|i| (0..h_levels.len()).map(move |j| (i, j)))
        .collect();
    let mut results: Vec<Vec<Option<CellOutcome>>> =
        (0..dt_levels.len()).map(|_| (0..h_levels.len()).map(|_| None).collect()).collect();

    let workers: usize = std::env::var("EVOLFEM_WORKERS")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
        .max(1)
        .min(cells.len().max(1));

    let queue = Mutex::new(cells);
    let sink = Mutex::new(&mut results);
    let estimate_condition = matches!(kind, GridKind::Condition);
    std::thread::scope(|scope| -> Result<()> {
        let mut handles = Vec::new();
        for _ in 0..workers {
            let queue = &queue;
            let sink = &sink;
            let common = &args.common;
            let resolver = &resolver;
            let h_levels = &h_levels;
            let dt_levels = &dt_levels;
            handles.push(scope.spawn(move || -> Result<()> {
                loop {
                    let cell = queue.lock().unwrap().pop();
                    let Some((i, j)) = cell else { break };
                    let outcome = run_cell(
                        common,
                        resolver,
                        h_levels[j],
                        dt_levels[i],
                        estimate_condition,
                    );
                    sink.lock().unwrap()[i][j] = Some(outcome?);
                }
                Ok(())
            }));
        }
        for handle in handles {
            handle.join().expect("worker panicked")?;
        }
        Ok(())
    })?;

    let mut any_failed = false;
    let mut any_warn = false;
    for row in &results {
        for cell in row.iter().flatten() {
            if cell.error.is_some() {
                any_failed = true;
            }
            if cell.warnings > 0 {
                any_warn = true;
            }
        }
    }

    match kind {
        GridKind::Convergence => {
            for norm in [NormKind::L2H1, NormKind::LinfL2] {
                let mut table = EocTable::new(norm, h_levels.clone(), dt_levels.clone());
                for (i, row) in results.iter().enumerate() {
                    for (j, cell) in row.iter().enumerate() {
                        if let Some(c) = cell {
                            match &c.report {
                                Some(r) => table.set(
                                    i,
                                    j,
                                    CellResult {
                                        l2h1: r.l2h1,
                                        linf_l2: r.linf_l2,
                                        failed: false,
                                    },
                                ),
                                None => table.set(
                                    i,
                                    j,
                                    CellResult {
                                        l2h1: 0.0,
                                        linf_l2: 0.0,
                                        failed: true,
                                    },
                                ),
                            }
                        }
                    }
                }
                let stem = match norm {
                    NormKind::L2H1 => "l2h1",
                    NormKind::LinfL2 => "linf_l2",
                };
                write_atomic(
                    &out.join(format!("table_{stem}.csv")),
                    &postproc::render(&table, RenderFormat::Csv),
                )?;
                write_atomic(
                    &out.join(format!("table_{stem}.md")),
                    &postproc::render(&table, RenderFormat::Markdown),
                )?;
                print!("{}", postproc::render(&table, RenderFormat::Markdown));
            }
        }
        GridKind::Condition => {
            let text = render_condition_tables(&h_levels, &dt_levels, &results);
            write_atomic(&out.join("condition.csv"), &text.0)?;
            write_atomic(&out.join("condition.md"), &text.1)?;
            print!("{}", text.1);
        }
    }

    // per-cell failure report
    for (i, row) in results.iter().enumerate() {
        for (j, cell) in row.iter().enumerate() {
            if let Some(CellOutcome {
                error: Some(message),
                ..
            }) = cell
            {
                eprintln!(
                    "cell (h={}, dt={}) failed: {message}",
                    h_levels[j], dt_levels[i]
                );
            }
        }
    }
    println!("outputs in {}", out.display());
    Ok(if any_failed {
        1
    } else if any_warn {
        2
    } else {
        0
    })
}

fn parse_levels(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| anyhow!("bad level '{s}'"))
        })
        .collect()
}

fn run_cell(
    common: &CommonArgs,
    resolver: &Resolver,
    h: f64,
    dt: f64,
    estimate_condition: bool,
) -> Result<CellOutcome> {
    let mut config = build_run_config(common, resolver, h, dt)?;
    if estimate_condition && config.condition_mode.is_none() {
        config.condition_mode = Some(CondMode::Auto);
    }
    if estimate_condition {
        config.compute_errors = false;
    }
    match timestepper::run(&config) {
        Ok(history) => {
            let report = if config.problem.exact.is_some() && !estimate_condition {
                Some(postproc::aggregate_norms(&history, &config)?)
            } else {
                None
            };
            let mut max_kappa = None;
            let mut max_bound = None;
            for d in &history.diagnostics {
                if let Some(c) = d.condition {
                    max_kappa = Some(max_kappa.unwrap_or(0.0f64).max(c.kappa));
                    max_bound = Some(max_bound.unwrap_or(0.0f64).max(c.bound));
                }
            }
            Ok(CellOutcome {
                report,
                max_kappa,
                max_bound,
                warnings: history.warnings.len(),
                error: None,
            })
        }
        Err(err) => Ok(CellOutcome {
            report: None,
            max_kappa: None,
            max_bound: None,
            warnings: 0,
            error: Some(err.to_string()),
        }),
    }
}

fn render_condition_tables(
    h_levels: &[f64],
    dt_levels: &[f64],
    results: &[Vec<Option<CellOutcome>>],
) -> (String, String) {
    use std::fmt::Write;
    let mut csv = String::from("h,dt,kappa,bound\n");
    let mut md = String::from("max condition number kappa(A)\n| dt \\ h |");
    for h in h_levels {
        md.push_str(&format!(" {h} |"));
    }
    md.push('\n');
    md.push_str("|---|");
    for _ in h_levels {
        md.push_str("---|");
    }
    md.push('\n');
    for (i, dt) in dt_levels.iter().enumerate() {
        let mut row = format!("| {dt} |");
        for (j, h) in h_levels.iter().enumerate() {
            let cell = results[i][j].as_ref();
            match cell {
                Some(CellOutcome {
                    max_kappa: Some(k),
                    max_bound: Some(b),
                    ..
                }) => {
                    let _ = writeln!(csv, "{h:.6e},{dt:.6e},{k:.6e},{b:.6e}");
                    row.push_str(&format!(" {k:.3e} |"));
                }
                Some(CellOutcome {
                    error: Some(_), ..
                }) => {
                    let _ = writeln!(csv, "{h:.6e},{dt:.6e},failed,failed");
                    row.push_str(" failed |");
                }
                _ => {
                    let _ = writeln!(csv, "{h:.6e},{dt:.6e},,");
                    row.push_str("  |");
                }
            }
        }
        md.push_str(&row);
        md.push('\n');
    }
    (csv, md)
}

fn cmd_demo(args: DemoArgs) -> Result<i32> {
    let resolver = Resolver::new(&args.common, "demo")?;
    let mut common = args.common.clone();
    if common.experiment.is_none() && common.problem.is_none() && resolver.lookup("experiment").is_none()
    {
        common.experiment = Some(4);
    }
    let h: f64 = resolver.get(args.h, "h")?.unwrap_or(0.25);
    let dt: f64 = resolver.get(args.dt, "dt")?.unwrap_or(1.0 / 16.0);
    let mut config = build_run_config(&common, &resolver, h, dt)?;
    if matches!(config.rho_policy, RhoPolicy::Constant(_)) && common.rho.is_none() {
        config.rho_policy = RhoPolicy::Scaled;
    }
    config.compute_errors = false;
    let out = output_dir(&common, &resolver, "demo")?;

    let history = timestepper::run(&config)?;
    write_atomic(&out.join("steps.jsonl"), &steps_jsonl(&history))?;
    write_atomic(
        &out.join("run.json"),
        &serde_json::to_string_pretty(&run_metadata(&config, &history))?,
    )?;

    let every = args.vtk_every.unwrap_or(1).max(1);
    if common.vtk || args.vtk_every.is_some() {
        for (n, state) in history.states.iter().enumerate() {
            if n % every != 0 && n != history.states.len() - 1 {
                continue;
            }
            let surface = geometry::extract_surface(&history.mesh, &state.levelset)?;
            let text = postproc::surface_solution_vtk(&history.mesh, state, &surface)?;
            write_atomic(&out.join(format!("surface_{n:04}.vtk")), &text)?;
        }
    }
    let last = history.diagnostics.last().unwrap();
    println!(
        "{}: {} steps, final area {:.4}, final norm {:.4}",
        config.problem.name,
        history.states.len() - 1,
        last.surface_area,
        last.solution_norm
    );
    println!("outputs in {}", out.display());
    Ok(if history.warnings.is_empty() { 0 } else { 2 })
}
