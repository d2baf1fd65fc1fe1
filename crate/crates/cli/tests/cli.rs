//! End-to-end tests of the command-line interface.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_evolfem"))
}

fn tmp_dir(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("evolfem-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

#[test]
fn run_writes_report_and_logs() {
    let out = tmp_dir("run");
    let status = bin()
        .args([
            "run",
            "--experiment",
            "1",
            "--h",
            "0.5",
            "--dt",
            "0.125",
            "--rho",
            "const:4",
            "--vtk",
            "--dump-matrix",
            "--out",
        ])
        .arg(&out)
        .output()
        .expect("binary runs");
    assert!(status.status.success(), "{status:?}");
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.starts_with("h,dt,l2h1,linf_l2"));
    let rows = evolfem::postproc::parse_csv(&csv).unwrap();
    assert_eq!(rows.len(), 1);
    let l2h1 = rows[0].l2h1.unwrap();
    assert!(l2h1 > 0.0 && l2h1 < 2.0, "implausible l2h1 {l2h1}");
    assert!(out.join("steps.jsonl").exists());
    assert!(out.join("run.json").exists());
    assert!(out.join("surface_final.vtk").exists());
    let mm = std::fs::read_to_string(out.join("system_step1.mtx")).unwrap();
    assert!(mm.starts_with("%%MatrixMarket"));
    // every step log line parses as JSON
    for line in std::fs::read_to_string(out.join("steps.jsonl")).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("dofs").is_some());
    }
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn missing_problem_is_an_error() {
    let output = bin()
        .args(["run", "--h", "0.5", "--dt", "0.125"])
        .output()
        .expect("binary runs");
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn solver_warnings_exit_code_two() {
    let out = tmp_dir("warn");
    // an iteration cap far below what 1e-15 needs forces a solver warning
    let output = bin()
        .args([
            "run",
            "--experiment",
            "1",
            "--h",
            "0.5",
            "--dt",
            "0.25",
            "--max-iter",
            "3",
            "--out",
        ])
        .arg(&out)
        .output()
        .expect("binary runs");
    assert_eq!(output.status.code(), Some(2), "{output:?}");
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn convergence_grid_tables() {
    let out = tmp_dir("conv");
    let output = bin()
        .args([
            "convergence",
            "--experiment",
            "1",
            "--h-levels",
            "0.5",
            "--dt-levels",
            "0.25",
            "--out",
        ])
        .arg(&out)
        .output()
        .expect("binary runs");
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    for name in [
        "table_l2h1.csv",
        "table_l2h1.md",
        "table_linf_l2.csv",
        "table_linf_l2.md",
    ] {
        assert!(out.join(name).exists(), "{name} missing");
    }
    // single cell: no EOC columns populated
    let rows =
        evolfem::postproc::parse_csv(&std::fs::read_to_string(out.join("table_l2h1.csv")).unwrap())
            .unwrap();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].eoc_x.is_none() && rows[0].eoc_t.is_none());
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn condition_sweep_reports_kappa() {
    let out = tmp_dir("cond");
    let output = bin()
        .args([
            "condition",
            "--experiment",
            "1",
            "--h-levels",
            "0.5",
            "--dt-levels",
            "0.5",
            "--out",
        ])
        .arg(&out)
        .output()
        .expect("binary runs");
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let csv = std::fs::read_to_string(out.join("condition.csv")).unwrap();
    let line = csv.lines().nth(1).unwrap();
    let kappa: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
    assert!(kappa > 1.0 && kappa < 1e5, "kappa {kappa}");
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn config_file_with_cli_override() {
    let out = tmp_dir("cfg");
    std::fs::create_dir_all(&out).unwrap();
    let cfg = out.join("sim.cfg");
    std::fs::write(
        &cfg,
        "[run]\nexperiment = 1\nh = 0.5\ndt = 0.5\nrho = const:4\n",
    )
    .unwrap();
    // the --dt flag overrides the config file's dt
    let output = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--dt", "0.25", "--out"])
        .arg(out.join("res"))
        .output()
        .expect("binary runs");
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("dt=0.25"), "{stdout}");
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn custom_problem_file() {
    let out = tmp_dir("custom");
    std::fs::create_dir_all(&out).unwrap();
    let problem = out.join("problem.cfg");
    std::fs::write(
        &problem,
        "\
name = steady-test\nnu = 1.0\nT = 0.5\nphi = sqrt(x^2+y^2+z^2) - 1\nw = (0, 0, 0)\nu0 = 1\nu_exact = 1\nwn_bound = 0\nw_sup = 0\n",
    )
    .unwrap();
    let output = bin()
        .args(["run", "--problem"])
        .arg(&problem)
        .args(["--h", "0.5", "--dt", "0.25", "--out"])
        .arg(out.join("res"))
        .output()
        .expect("binary runs");
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    let csv = std::fs::read_to_string(out.join("res").join("report.csv")).unwrap();
    let rows = evolfem::postproc::parse_csv(&csv).unwrap();
    // constant solution is reproduced to roundoff
    assert!(rows[0].linf_l2.unwrap() < 1e-10);
    let _ = std::fs::remove_dir_all(&out);
}

#[test]
fn demo_writes_vtk_series() {
    let out = tmp_dir("demo");
    // dt stays below the coercivity limit 1/(4 xi_h) of the growing spheres
    let output = bin()
        .args([
            "demo", "--h", "0.5", "--dt", "0.125", "--vtk-every", "2", "--out",
        ])
        .arg(&out)
        .output()
        .expect("binary runs");
    assert_eq!(output.status.code(), Some(0), "{output:?}");
    assert!(Path::new(&out.join("surface_0000.vtk")).exists());
    assert!(Path::new(&out.join("surface_0002.vtk")).exists());
    let text = std::fs::read_to_string(out.join("surface_0000.vtk")).unwrap();
    assert!(text.contains("SCALARS u double 1"));
    let _ = std::fs::remove_dir_all(&out);
}
