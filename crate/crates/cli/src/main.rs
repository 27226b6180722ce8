//! Command-line runner: loads a scenario file, drives the solver, and emits
//! field snapshots plus iteration reports as CSV for external plotting.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use mfgc_core::drift::optimal_feedback;
use mfgc_core::outer::{
    continuation, newton_outer, stationary_solve, stationary_residual, ContinuationSchedule,
    OuterBase, OuterConfig, OuterState, SolveReport,
};
use mfgc_core::scenarios::ScenarioConfig;
use mfgc_core::{DiscreteProblem, ScalarField, SpaceTimeGrid, VectorField};

#[derive(Parser)]
#[command(name = "mfgc", about = "Mean field games with interaction through controls")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Clone)]
struct SolverFlags {
    /// Outer Newton tolerance (normalized Euclidean residual)
    #[arg(long)]
    tol_outer: Option<f64>,
    /// Inner BiCGStab relative tolerance
    #[arg(long)]
    tol_inner: Option<f64>,
    /// Outer Newton iteration cap
    #[arg(long)]
    max_newton: Option<usize>,
    /// Continuation schedule, e.g. nu=0.5,0.1,0.05,0.01
    #[arg(long)]
    continuation: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one scenario and write snapshots plus a report
    Run {
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Snapshot times, comma separated; default: six evenly spaced
        #[arg(long)]
        snapshots: Option<String>,
        #[command(flatten)]
        flags: SolverFlags,
    },
    /// Solve a grid of parameter values and tabulate iteration counts
    Sweep {
        scenario: PathBuf,
        /// Repeatable: --vary model.lambda=0.2,0.5,0.8
        #[arg(long, required = true)]
        vary: Vec<String>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[command(flatten)]
        flags: SolverFlags,
    },
    /// Iterate to the stationary regime and write the steady fields
    Stationary {
        scenario: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Time-variation tolerance across levels
        #[arg(long, default_value_t = 1e-6)]
        steady_tol: f64,
        #[arg(long, default_value_t = 200)]
        max_cycles: usize,
        #[command(flatten)]
        flags: SolverFlags,
    },
}

fn main() {
    if let Err(e) = dispatch() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn dispatch() -> Result<()> {
    match Cli::parse().cmd {
        Command::Run { scenario, out, snapshots, flags } => cmd_run(&scenario, &out, snapshots.as_deref(), &flags),
        Command::Sweep { scenario, vary, jobs, out, flags } => cmd_sweep(&scenario, &vary, jobs, &out, &flags),
        Command::Stationary { scenario, out, steady_tol, max_cycles, flags } => {
            cmd_stationary(&scenario, &out, steady_tol, max_cycles, &flags)
        }
    }
}

fn load_config(path: &Path, flags: &SolverFlags) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read scenario file {}", path.display()))?;
    let mut cfg = ScenarioConfig::parse(&text).context("scenario file")?;
    if let Some(t) = flags.tol_outer {
        cfg.tol_outer = t;
    }
    if let Some(t) = flags.tol_inner {
        cfg.tol_inner = t;
    }
    if let Some(n) = flags.max_newton {
        cfg.max_newton = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_schedule(spec: &str) -> Result<ContinuationSchedule> {
    let (key, vals) = spec
        .split_once('=')
        .context("continuation spec must look like nu=0.5,0.1 or lt=0.5:0.5,0.9:0.95")?;
    match key.trim() {
        "nu" => {
            let values: Vec<f64> = vals
                .split(',')
                .map(|v| v.trim().parse::<f64>().context("continuation value"))
                .collect::<Result<_>>()?;
            if values.is_empty() {
                bail!("empty continuation schedule");
            }
            Ok(ContinuationSchedule::nu_descent(&values))
        }
        "lt" => {
            let pairs: Vec<(f64, f64)> = vals
                .split(',')
                .map(|v| {
                    let (l, t) = v.split_once(':').context("lt stage must look like 0.5:0.5")?;
                    Ok((l.trim().parse::<f64>()?, t.trim().parse::<f64>()?))
                })
                .collect::<Result<_>>()?;
            if pairs.is_empty() {
                bail!("empty continuation schedule");
            }
            Ok(ContinuationSchedule::lambda_theta_ramp(&pairs))
        }
        other => bail!("unknown continuation key '{other}' (expected nu or lt)"),
    }
}

/// Runs either a plain Newton solve or a continuation schedule.
fn solve(
    problem: &DiscreteProblem,
    cfg: &OuterConfig,
    schedule: Option<&ContinuationSchedule>,
) -> Result<(OuterState, OuterBase, Vec<SolveReport>)> {
    let guess = OuterState::initial_guess(problem);
    match schedule {
        Some(s) => {
            let (st, base, reports) = continuation(problem, s, &guess, cfg)?;
            Ok((st, base, reports))
        }
        None => {
            let (st, base, rep) = newton_outer(problem, &guess, cfg)?;
            Ok((st, base, vec![rep]))
        }
    }
}

fn write_field_csv(path: &Path, g: &SpaceTimeGrid, values: impl Fn(usize, usize) -> f64) -> Result<()> {
    let mut s = String::from("i,j,x1,x2,value\n");
    for i in 0..g.nx1 {
        for j in 0..g.nx2 {
            let [x1, x2] = g.x(i, j);
            s.push_str(&format!("{i},{j},{x1},{x2},{}\n", values(i, j)));
        }
    }
    fs::write(path, s).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

/// Snapshots of m, u, the feedback components, and its norm at one level.
fn write_snapshots(
    dir: &Path,
    g: &SpaceTimeGrid,
    t: f64,
    m: &ScalarField,
    u: &ScalarField,
    alpha: &VectorField,
) -> Result<()> {
    let tag = format!("{t}");
    write_field_csv(&dir.join(format!("m_t{tag}.csv")), g, |i, j| m.at(i, j))?;
    write_field_csv(&dir.join(format!("u_t{tag}.csv")), g, |i, j| u.at(i, j))?;
    write_field_csv(&dir.join(format!("alpha1_t{tag}.csv")), g, |i, j| alpha.at(i, j)[0])?;
    write_field_csv(&dir.join(format!("alpha2_t{tag}.csv")), g, |i, j| alpha.at(i, j)[1])?;
    write_field_csv(&dir.join(format!("alpha_norm_t{tag}.csv")), g, |i, j| {
        let a = alpha.at(i, j);
        (a[0] * a[0] + a[1] * a[1]).sqrt()
    })
}

const REPORT_HEADER: &str =
    "stage,nu,lambda,theta,c,L,grid,newton_iters,avg_bicgstab,final_residual,seconds\n";

fn report_row(p: &DiscreteProblem, rep: &SolveReport) -> String {
    let g = &p.grid;
    format!(
        "{},{},{},{},{},{},{}x{}x{},{},{:.2},{:.3e},{:.3}\n",
        rep.stage,
        p.nu,
        p.ham.lambda,
        p.ham.theta,
        p.c,
        p.drift.l,
        g.nx1,
        g.nx2,
        g.nt,
        rep.newton_iters,
        rep.avg_bicgstab(),
        rep.final_residual,
        rep.seconds
    )
}

fn cmd_run(scenario: &Path, out: &Path, snapshots: Option<&str>, flags: &SolverFlags) -> Result<()> {
    let cfg = load_config(scenario, flags)?;
    let mut problem = cfg.build()?;
    let schedule = flags.continuation.as_deref().map(parse_schedule).transpose()?;
    if let Some(s) = &schedule {
        // continuation overrides the scenario's viscosity stage by stage
        if let Some(nu) = s.stages.last().and_then(|st| st.nu) {
            problem.nu = nu;
        }
    }
    let times: Vec<f64> = match snapshots {
        Some(list) => list
            .split(',')
            .map(|v| v.trim().parse::<f64>().context("snapshot time"))
            .collect::<Result<_>>()?,
        None => (0..6).map(|k| k as f64 * cfg.horizon / 5.0).collect(),
    };
    let g = problem.grid.clone();
    for &t in &times {
        if !(0.0..=cfg.horizon + 1e-12).contains(&t) {
            bail!("snapshot time {t} outside [0, {}]", cfg.horizon);
        }
    }

    let (st, base, reports) = solve(&problem, &cfg.outer_config(), schedule.as_ref())?;

    fs::create_dir_all(out)?;
    let mut report = String::from(REPORT_HEADER);
    for rep in &reports {
        report.push_str(&report_row(&problem, rep));
    }
    fs::write(out.join("report.csv"), &report)?;

    for &t in &times {
        let k = ((t / g.dt).round() as usize).min(g.nt);
        let vk = st.v[k.min(g.nt - 1)].clone();
        let alpha = optimal_feedback(&g, &base.hjb.u[k], &vk, &problem.ham);
        write_snapshots(out, &g, t, &base.fp.m[k], &base.hjb.u[k], &alpha)?;
    }

    let last = reports.last().unwrap();
    println!(
        "converged: {} Newton steps, avg BiCGStab {:.2}, residual {:.3e}",
        last.newton_iters,
        last.avg_bicgstab(),
        last.final_residual
    );
    let history: Vec<String> = last.residual_history.iter().map(|r| format!("{r:.3e}")).collect();
    println!("residual history: {}", history.join(" "));
    Ok(())
}

struct Cell {
    label: String,
    overrides: Vec<(String, String)>,
}

fn cells_from_vary(vary: &[String]) -> Result<(Vec<String>, Vec<Cell>)> {
    let mut axes: Vec<(String, Vec<String>)> = Vec::new();
    for spec in vary {
        let (key, vals) = spec.split_once('=').context("--vary expects key=v1,v2,...")?;
        let values: Vec<String> = vals.split(',').map(|v| v.trim().to_string()).collect();
        if values.is_empty() {
            bail!("--vary {key} has no values");
        }
        axes.push((key.trim().to_string(), values));
    }
    let mut cells = vec![Cell { label: String::new(), overrides: Vec::new() }];
    for (key, values) in &axes {
        let mut next = Vec::with_capacity(cells.len() * values.len());
        for cell in &cells {
            for v in values {
                let mut overrides = cell.overrides.clone();
                overrides.push((key.clone(), v.clone()));
                let label = if cell.label.is_empty() {
                    format!("{key}={v}")
                } else {
                    format!("{} {key}={v}", cell.label)
                };
                next.push(Cell { label, overrides });
            }
        }
        cells = next;
    }
    Ok((axes.into_iter().map(|(k, _)| k).collect(), cells))
}

fn cmd_sweep(scenario: &Path, vary: &[String], jobs: usize, out: &Path, flags: &SolverFlags) -> Result<()> {
    let base_cfg = load_config(scenario, flags)?;
    let (keys, cells) = cells_from_vary(vary)?;
    fs::create_dir_all(out)?;

    // (lambda, theta) tables use the neighbor warm-start rule: strictly above
    // the diagonal take the left neighbor's solution, elsewhere the one from
    // the cell above; this forces a sequential row-major order
    let lambda_theta_table = keys.len() == 2
        && keys.contains(&"model.lambda".to_string())
        && keys.contains(&"model.theta".to_string());

    let mut rows: Vec<String> = vec![String::new(); cells.len()];
    if lambda_theta_table {
        let n_inner = cells.len() / vary_len(vary, &keys[0])?;
        let lambda_first = keys[0] == "model.lambda";
        let mut states: Vec<Option<OuterState>> = vec![None; cells.len()];
        for (idx, cell) in cells.iter().enumerate() {
            let (row, col) = (idx / n_inner, idx % n_inner);
            // map (row, col) to (lambda index, theta index)
            let (li, ti) = if lambda_first { (row, col) } else { (col, row) };
            let warm = if ti > li {
                // left neighbor in the lambda/theta table
                theta_neighbor(idx, lambda_first, n_inner)
            } else {
                lambda_neighbor(idx, lambda_first, n_inner)
            };
            let guess_from = warm.and_then(|w| states[w].clone());
            let (row_text, state) = run_cell(&base_cfg, cell, guess_from);
            rows[idx] = row_text;
            states[idx] = state;
        }
    } else if jobs <= 1 {
        for (idx, cell) in cells.iter().enumerate() {
            rows[idx] = run_cell(&base_cfg, cell, None).0;
        }
    } else {
        let pending = Mutex::new((0usize, &mut rows));
        std::thread::scope(|scope| {
            for _ in 0..jobs.min(cells.len()) {
                scope.spawn(|| loop {
                    let idx = {
                        let mut p = pending.lock().unwrap();
                        if p.0 >= cells.len() {
                            return;
                        }
                        p.0 += 1;
                        p.0 - 1
                    };
                    let row = run_cell(&base_cfg, &cells[idx], None).0;
                    pending.lock().unwrap().1[idx] = row;
                });
            }
        });
    }

    let mut table = String::from(REPORT_HEADER);
    for r in rows {
        table.push_str(&r);
    }
    fs::write(out.join("sweep.csv"), &table)?;
    print!("{table}");
    Ok(())
}

fn vary_len(vary: &[String], key: &str) -> Result<usize> {
    for spec in vary {
        if let Some((k, vals)) = spec.split_once('=') {
            if k.trim() == key {
                return Ok(vals.split(',').count());
            }
        }
    }
    bail!("missing vary key {key}")
}

/// Cell index of the neighbor differing by one theta step (same lambda).
fn theta_neighbor(idx: usize, lambda_first: bool, n_inner: usize) -> Option<usize> {
    if lambda_first {
        (idx % n_inner > 0).then(|| idx - 1)
    } else {
        (idx >= n_inner).then(|| idx - n_inner)
    }
}

/// Cell index of the neighbor differing by one lambda step (same theta).
fn lambda_neighbor(idx: usize, lambda_first: bool, n_inner: usize) -> Option<usize> {
    if lambda_first {
        (idx >= n_inner).then(|| idx - n_inner)
    } else {
        (idx % n_inner > 0).then(|| idx - 1)
    }
}

fn run_cell(
    base_cfg: &ScenarioConfig,
    cell: &Cell,
    warm: Option<OuterState>,
) -> (String, Option<OuterState>) {
    let attempt = || -> Result<(String, OuterState)> {
        let mut cfg = base_cfg.clone();
        for (k, v) in &cell.overrides {
            cfg.set(k, v)?;
        }
        let problem = cfg.build()?;
        let guess = warm.clone().unwrap_or_else(|| OuterState::initial_guess(&problem));
        let (st, _, mut rep) = newton_outer(&problem, &guess, &cfg.outer_config())?;
        rep.stage = cell.label.replace(',', ";");
        Ok((report_row(&problem, &rep), st))
    };
    match attempt() {
        Ok((row, st)) => (row, Some(st)),
        Err(e) => {
            let msg = format!("{e:#}").replace([',', '\n'], ";");
            (format!("{} FAILED: {msg},,,,,,,,,,\n", cell.label.replace(',', ";")), None)
        }
    }
}

fn cmd_stationary(
    scenario: &Path,
    out: &Path,
    steady_tol: f64,
    max_cycles: usize,
    flags: &SolverFlags,
) -> Result<()> {
    let cfg = load_config(scenario, flags)?;
    let problem = cfg.build()?;
    let g = problem.grid.clone();
    // an optional schedule warms up the first cycle
    let warm = match &flags.continuation {
        Some(spec) => {
            let sched = parse_schedule(spec)?;
            let guess = OuterState::initial_guess(&problem);
            Some(continuation(&problem, &sched, &guess, &cfg.outer_config())?.0)
        }
        None => None,
    };
    let res = stationary_solve(&problem, &cfg.outer_config(), steady_tol, max_cycles, warm.as_ref())?;
    fs::create_dir_all(out)?;
    let alpha = optimal_feedback(&g, &res.u, &res.v, &problem.ham);
    write_field_csv(&out.join("steady_m.csv"), &g, |i, j| res.m.at(i, j))?;
    write_field_csv(&out.join("steady_u.csv"), &g, |i, j| res.u.at(i, j))?;
    write_field_csv(&out.join("steady_alpha_norm.csv"), &g, |i, j| {
        let a = alpha.at(i, j);
        (a[0] * a[0] + a[1] * a[1]).sqrt()
    })?;
    let mut report = String::from(REPORT_HEADER);
    for rep in &res.reports {
        report.push_str(&report_row(&problem, rep));
    }
    fs::write(out.join("report.csv"), &report)?;
    let (ru, rm, rv) = stationary_residual(&problem, &res.u, &res.m, &res.v);
    let mut stdout = std::io::stdout();
    writeln!(
        stdout,
        "steady after {} cycles: time variation {:.3e}, stationary residuals u {:.3e} m {:.3e} V {:.3e}",
        res.cycles, res.variation, ru, rm, rv
    )?;
    Ok(())
}
