//! Runs configured experiments and writes their outputs: a JSON summary
//! plus CSV maps of the transport map, the residual and the stencil usage.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use otmap_core::diagnostics;
use otmap_core::grid::build_grid;
use otmap_core::lattice::DirectionSet;
use otmap_core::operators::{ma0_tilde, ma_lbr};
use otmap_core::solver::{Report, StopReason, System};
use otmap_core::{bfo, IVec2};

use crate::config::RunConfig;

/// What went wrong, split by exit code: configuration problems are caught
/// before any solve and leave no outputs; run failures happen after the
/// configuration was accepted.
#[derive(Debug)]
pub enum Failure {
    /// Invalid configuration (exit code 2).
    Config(String),
    /// The solver or an output write failed (exit code 1).
    Run(String),
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(msg) => write!(f, "configuration error: {msg}"),
            Failure::Run(msg) => write!(f, "run error: {msg}"),
        }
    }
}

type Result<T> = std::result::Result<T, Failure>;

/// Machine-readable result of one run. Field values are all deterministic
/// functions of the configuration, so repeated runs produce byte-identical
/// summaries.
#[derive(Debug, Serialize)]
pub struct Summary {
    pub tag: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub n: usize,
    pub h: f64,
    pub width: i64,
    pub formulation: String,
    pub gradient: String,
    pub viscosity: bool,
    pub nodes: usize,
    pub source_nodes: usize,
    pub mass_defect: f64,
    pub converged: bool,
    pub stop: String,
    pub iterations: usize,
    pub res_inf: f64,
    pub res_l2: f64,
    pub anchor_value: f64,
    /// Largest distance from a mapped exterior node to the target set.
    pub max_exterior_gradient_distance: f64,
    /// Relative L1 error against the exact map, when the source density
    /// has one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gradient_l1_error: Option<f64>,
    /// `sum g(grad u) |cells|` over the sampled subgradient measure, when
    /// `output.measure_resolution` enables it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mass_balance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exterior_flatness_violations: Option<usize>,
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, Serialize)]
pub struct TraceRow {
    pub res_inf: f64,
    pub res_l2: f64,
}

fn stop_name(stop: StopReason) -> &'static str {
    match stop {
        StopReason::Converged => "converged",
        StopReason::Stalled => "stalled",
        StopReason::StepFailed => "step-failed",
        StopReason::MaxIterations => "max-iterations",
    }
}

/// Builds the discrete system a config describes. Every failure here is a
/// configuration problem.
pub fn build_system(cfg: &RunConfig) -> Result<System> {
    let as_config = |e: otmap_core::Error| Failure::Config(e.to_string());
    let grid = build_grid(cfg.grid.n, cfg.domain(), cfg.region().map_err(cfg_err)?, None)
        .map_err(as_config)?;
    let dirs = DirectionSet::new(cfg.grid.width).map_err(as_config)?;
    let f = cfg
        .source_density()
        .map_err(cfg_err)?
        .cell_averages(&grid)
        .map_err(as_config)?;
    let g = cfg.target_density().map_err(cfg_err)?;
    let solver = cfg.solver_config().map_err(cfg_err)?;
    System::new(grid, dirs, g, f, solver).map_err(as_config)
}

fn cfg_err(e: crate::config::ConfigError) -> Failure {
    Failure::Config(e.0)
}

/// Runs one experiment end to end and writes `<tag>.summary.json`,
/// `<tag>.map.csv`, `<tag>.error.csv` and `<tag>.stencil.csv` into the
/// output directory. The files are written for every completed solve,
/// converged or not.
pub fn run(cfg: &RunConfig, out_override: Option<&Path>) -> Result<Summary> {
    let system = build_system(cfg)?;
    let report = system
        .newton_solve(None)
        .map_err(|e| Failure::Run(e.to_string()))?;
    let summary = summarize(cfg, &system, &report)?;

    let dir = out_dir(cfg, out_override);
    fs::create_dir_all(&dir)
        .map_err(|e| Failure::Run(format!("cannot create {}: {e}", dir.display())))?;
    let tag = cfg.tag();
    write_file(
        &dir.join(format!("{tag}.summary.json")),
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    write_file(&dir.join(format!("{tag}.map.csv")), &map_csv(&system, &report))?;
    write_file(&dir.join(format!("{tag}.error.csv")), &error_csv(&system, &report))?;
    write_file(
        &dir.join(format!("{tag}.stencil.csv")),
        &stencil_csv(&system, &report),
    )?;
    Ok(summary)
}

fn out_dir(cfg: &RunConfig, out_override: Option<&Path>) -> PathBuf {
    out_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from(&cfg.output.dir))
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content)
        .map_err(|e| Failure::Run(format!("cannot write {}: {e}", path.display())))
}

fn summarize(cfg: &RunConfig, system: &System, report: &Report) -> Result<Summary> {
    let grid = system.grid();
    let exterior_distance = diagnostics::exterior_gradient_distances(grid, &report.u, system.target())
        .into_iter()
        .map(|(_, d)| d)
        .fold(0.0, f64::max);
    let gradient_l1_error = if cfg.has_exact_map() {
        Some(
            diagnostics::gradient_l1_error(grid, &report.u, bfo::exact_gradient)
                .map_err(|e| Failure::Run(e.to_string()))?,
        )
    } else {
        None
    };
    let (mass_balance, flatness) = if cfg.output.measure_resolution >= 64 {
        let measure = diagnostics::envelope_subgradient_areas(
            grid,
            &report.u,
            system.target(),
            cfg.output.measure_resolution,
        )
        .map_err(|e| Failure::Run(e.to_string()))?;
        let balance = diagnostics::mass_balance(grid, &report.u, system.target_density(), &measure);
        let flat = diagnostics::exterior_flatness_violations(grid, &measure, 3.0).len();
        (Some(balance), Some(flat))
    } else {
        (None, None)
    };
    Ok(Summary {
        tag: cfg.tag().to_string(),
        preset: cfg.preset.clone(),
        n: grid.n(),
        h: grid.h(),
        width: system.dirs().width(),
        formulation: cfg.solver.formulation.clone(),
        gradient: cfg.solver.gradient.clone(),
        viscosity: cfg.solver.viscosity,
        nodes: grid.len(),
        source_nodes: (0..grid.len()).filter(|&i| grid.is_source(i)).count(),
        mass_defect: report.mass_defect,
        converged: report.converged(),
        stop: stop_name(report.stop).to_string(),
        iterations: report.iterations,
        res_inf: report.res_inf,
        res_l2: report.res_l2,
        anchor_value: report.anchor_value,
        max_exterior_gradient_distance: exterior_distance,
        gradient_l1_error,
        mass_balance,
        exterior_flatness_violations: flatness,
        trace: report
            .trace
            .iter()
            .map(|r| TraceRow {
                res_inf: r.res_inf,
                res_l2: r.res_l2,
            })
            .collect(),
    })
}

/// Discrete transport map: node position, centered-difference gradient and
/// a source/exterior mask, one row per node.
fn map_csv(system: &System, report: &Report) -> String {
    let grid = system.grid();
    let mut out = String::from("x1,x2,g1,g2,mask\n");
    for idx in 0..grid.len() {
        let p = grid.node_pos(idx);
        let g = diagnostics::map_gradient(grid, &report.u, idx);
        let mask = grid.is_source(idx) as u8;
        writeln!(out, "{},{},{},{},{mask}", p.x, p.y, g.x, g.y).unwrap();
    }
    out
}

/// Final residual per node.
fn error_csv(system: &System, report: &Report) -> String {
    let grid = system.grid();
    let mut out = String::from("x1,x2,residual\n");
    for idx in 0..grid.len() {
        let p = grid.node_pos(idx);
        writeln!(out, "{},{},{}", p.x, p.y, report.residual[idx]).unwrap();
    }
    out
}

/// Stencil usage per node: sup norm of the active direction at the solved
/// potential — the largest coordinate of the minimizing superbase at
/// source nodes, of the minimizing constraint direction elsewhere.
fn stencil_csv(system: &System, report: &Report) -> String {
    let grid = system.grid();
    let dirs = system.dirs();
    let mut out = String::from("x1,x2,stencil_norm,mask\n");
    let norm_inf = |e: IVec2| e.x.abs().max(e.y.abs());
    for idx in 0..grid.len() {
        let p = grid.node_pos(idx);
        let (norm, mask) = if grid.is_source(idx) {
            let norm = match ma_lbr(grid, dirs, &report.u, idx) {
                Ok(eval) => {
                    let sb = &dirs.superbases()[eval.superbase];
                    sb.e.iter().copied().map(norm_inf).max().unwrap()
                }
                Err(_) => 0,
            };
            (norm, 1)
        } else {
            let norm = match ma0_tilde(grid, dirs, system.target(), &report.u, idx) {
                Ok(eval) => norm_inf(eval.direction),
                Err(_) => 0,
            };
            (norm, 0)
        };
        writeln!(out, "{},{},{norm},{mask}", p.x, p.y).unwrap();
    }
    out
}

/// Which scalar a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    /// Grid nodes per axis.
    N,
    /// Stencil width.
    Width,
}

impl SweepParam {
    fn name(self) -> &'static str {
        match self {
            SweepParam::N => "n",
            SweepParam::Width => "width",
        }
    }
}

/// Runs the config once per parameter value and writes `<tag>.sweep.csv`.
///
/// All values are validated before anything runs; a bad value is a
/// configuration error and nothing is written. Runs that fail to converge
/// (or fail outright) become table rows with `converged=false` and NaN
/// numeric fields — the sweep itself still succeeds.
pub fn sweep(
    cfg: &RunConfig,
    param: SweepParam,
    values: &[i64],
    out_override: Option<&Path>,
) -> Result<PathBuf> {
    for &v in values {
        let valid = match param {
            SweepParam::N => v >= 8,
            SweepParam::Width => v >= 1,
        };
        if !valid {
            return Err(Failure::Config(format!(
                "sweep value {v} is out of range for {}",
                param.name()
            )));
        }
    }

    let with_error = cfg.has_exact_map();
    let mut table = String::from("param,value,n,width,iterations,res_inf,res_l2,anchor_value,converged");
    if with_error {
        table.push_str(",gradient_l1_error");
    }
    table.push('\n');

    for &v in values {
        let mut case = cfg.clone();
        match param {
            SweepParam::N => case.grid.n = v as usize,
            SweepParam::Width => case.grid.width = v,
        }
        let row = sweep_case(&case, &v.to_string(), param, with_error);
        table.push_str(&row);
    }

    let dir = out_dir(cfg, out_override);
    fs::create_dir_all(&dir)
        .map_err(|e| Failure::Run(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(format!("{}.sweep.csv", cfg.tag()));
    write_file(&path, &table)?;
    Ok(path)
}

fn sweep_case(case: &RunConfig, value: &str, param: SweepParam, with_error: bool) -> String {
    let name = param.name();
    let failed = |n: usize, width: i64| {
        let mut row = format!("{name},{value},{n},{width},0,NaN,NaN,NaN,false");
        if with_error {
            row.push_str(",NaN");
        }
        row.push('\n');
        row
    };
    let Ok(system) = build_system(case) else {
        return failed(case.grid.n, case.grid.width);
    };
    let Ok(report) = system.newton_solve(None) else {
        return failed(case.grid.n, case.grid.width);
    };
    let mut row = format!(
        "{name},{value},{},{},{},{},{},{},{}",
        system.grid().n(),
        system.dirs().width(),
        report.iterations,
        report.res_inf,
        report.res_l2,
        report.anchor_value,
        report.converged(),
    );
    if with_error {
        let err = diagnostics::gradient_l1_error(system.grid(), &report.u, bfo::exact_gradient)
            .map(|e| e.to_string())
            .unwrap_or_else(|_| "NaN".into());
        row.push(',');
        row.push_str(&err);
    }
    row.push('\n');
    row
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config;

    fn small_disc() -> RunConfig {
        config::parse(
            r#"
            preset = "square-to-disc"
            [grid]
            n = 33
            width = 2
            "#,
        )
        .unwrap()
    }

    #[test]
    fn run_writes_all_outputs_and_summary_is_consistent() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_disc();
        let summary = run(&cfg, Some(dir.path())).unwrap();
        assert!(summary.converged, "stop = {}", summary.stop);
        assert_eq!(summary.n, 33);
        assert_eq!(summary.width, 2);
        assert!(summary.res_inf <= 1e-10);
        assert!(summary.gradient_l1_error.is_none());

        for suffix in ["summary.json", "map.csv", "error.csv", "stencil.csv"] {
            let path = dir.path().join(format!("square-to-disc.{suffix}"));
            assert!(path.exists(), "missing {suffix}");
        }
        let map = fs::read_to_string(dir.path().join("square-to-disc.map.csv")).unwrap();
        assert_eq!(map.lines().count(), 33 * 33 + 1);
        assert!(map.starts_with("x1,x2,g1,g2,mask\n"));
    }

    #[test]
    fn repeated_runs_are_byte_identical() {
        let cfg = small_disc();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        run(&cfg, Some(a.path())).unwrap();
        run(&cfg, Some(b.path())).unwrap();
        for suffix in ["summary.json", "map.csv", "error.csv", "stencil.csv"] {
            let name = format!("square-to-disc.{suffix}");
            let left = fs::read(a.path().join(&name)).unwrap();
            let right = fs::read(b.path().join(&name)).unwrap();
            assert_eq!(left, right, "{name} differs between runs");
        }
    }

    #[test]
    fn invalid_geometry_is_a_config_failure() {
        let mut cfg = small_disc();
        cfg.grid.n = 9; // stencil no longer fits between region and boundary
        cfg.grid.width = 4;
        match run(&cfg, None) {
            Err(Failure::Config(_)) => {}
            other => panic!("expected a config failure, got {other:?}"),
        }
    }

    #[test]
    fn sweep_validates_before_running_and_tolerates_failed_rows() {
        let cfg = small_disc();
        let dir = tempfile::tempdir().unwrap();
        match sweep(&cfg, SweepParam::Width, &[2, 0], Some(dir.path())) {
            Err(Failure::Config(msg)) => assert!(msg.contains('0')),
            other => panic!("expected a config failure, got {other:?}"),
        }
        assert!(!dir.path().join("square-to-disc.sweep.csv").exists());

        // Width 9 cannot fit on n = 33 with this margin: the row records the
        // failure, the sweep still writes the table.
        let path = sweep(&cfg, SweepParam::Width, &[2, 9], Some(dir.path())).unwrap();
        let table = fs::read_to_string(path).unwrap();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("width,2,33,2,") && lines[1].contains("true"));
        assert!(lines[2].starts_with("width,9,33,9,0,NaN") && lines[2].contains("false"));
    }

    #[test]
    fn empty_sweep_writes_a_header_only_table() {
        let cfg = small_disc();
        let dir = tempfile::tempdir().unwrap();
        let path = sweep(&cfg, SweepParam::N, &[], Some(dir.path())).unwrap();
        let table = fs::read_to_string(path).unwrap();
        assert_eq!(
            table,
            "param,value,n,width,iterations,res_inf,res_l2,anchor_value,converged\n"
        );
    }
}
