use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use retrocausal::action::{self, ActionBreakdown};
use retrocausal::ensemble::{run_ensemble_detailed, EnsembleSetup};
use retrocausal::io::{fmt_f64, read_trajectory_csv, read_trajectory_json, write_trajectory_csv, write_trajectory_json};
use retrocausal::model::EnergyCollision;
use retrocausal::solver::solve_bvp;
use retrocausal::varcalc2t::{run_battery, BatteryOptions, CHECK_NAMES};
use retrocausal::{CoefficientTrajectory, CollapseMetrics, Couplings, Error as CoreError, KernelSpec, TimeGrid};
use serde::Serialize;

use crate::config::RunConfig;
use crate::{RunArgs, VERSION};

const DEGENERACY_TOL: f64 = 1e-9;

/// Raised after outputs are written when the solver did not reach tolerance.
#[derive(Debug)]
pub struct NotConverged(pub String);

impl std::fmt::Display for NotConverged {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NotConverged {}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<NotConverged>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            if matches!(e, CoreError::NumericalBlowup { .. } | CoreError::Singular(_) | CoreError::EnsembleFailed { .. }) {
                return 2;
            }
        }
    }
    1
}

fn load(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    cfg.resolve_output(args.out.clone());
    fs::create_dir_all(&cfg.output.directory)
        .with_context(|| format!("creating {}", cfg.output.directory.display()))?;
    Ok(cfg)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    std::io::Write::write_all(&mut w, b"\n")?;
    Ok(())
}

fn write_trajectory(cfg: &RunConfig, dir: &Path, stem: &str, traj: &CoefficientTrajectory) -> Result<()> {
    if cfg.output.csv {
        write_trajectory_csv(traj, create(dir, &format!("{stem}.csv"))?)?;
    }
    if cfg.output.json {
        write_trajectory_json(traj, create(dir, &format!("{stem}.json"))?)?;
    }
    Ok(())
}

fn slow_variation(cfg: &RunConfig, couplings: &Couplings) -> Option<f64> {
    cfg.model.spectrum.min_energy_gap().map(|gap| couplings.kernel().slow_variation_epsilon(couplings.hbar(), gap))
}

fn degeneracy_warnings(cfg: &RunConfig) -> Vec<EnergyCollision> {
    let collisions = cfg.model.spectrum.validate_nondegenerate(DEGENERACY_TOL);
    for c in &collisions {
        eprintln!("warning: modes {:?} and {:?} share a combined energy", c.first, c.second);
    }
    collisions
}

fn final_velocity_norm(traj: &CoefficientTrajectory) -> f64 {
    let m = traj.n_modes();
    let d = traj.time_derivative();
    d[d.len() - m..].iter().map(|c| c.norm()).fold(0.0, f64::max)
}

#[derive(Serialize)]
struct SolveSummary {
    converged: bool,
    iterations: usize,
    final_residual_norm: f64,
    interior_residual_norm: f64,
    nbc_residual: f64,
    initial_derivative_norm: f64,
    final_velocity_norm: f64,
    lambda_end: Option<f64>,
    action: ActionBreakdown,
    collapse: Option<CollapseMetrics>,
}

#[derive(Serialize)]
struct Manifest<'a, T: Serialize> {
    version: &'static str,
    command: &'a [String],
    seed: Option<u64>,
    config: &'a RunConfig,
    slow_variation_epsilon: Option<f64>,
    degenerate_modes: Vec<EnergyCollision>,
    result: T,
}

pub fn solve(args: &RunArgs, invocation: &[String]) -> Result<ExitCode> {
    let cfg = load(args)?;
    let dir = cfg.output.directory.clone();
    let couplings = cfg.couplings()?;
    let grid = cfg.time_grid()?;
    let spectrum = &cfg.model.spectrum;
    let degenerate_modes = degeneracy_warnings(&cfg);

    let res = solve_bvp(&cfg.model.initial, spectrum, &couplings, &grid, &cfg.solve)?;
    let traj = &res.trajectory;
    write_trajectory(&cfg, &dir, "trajectory", traj)?;
    let summary = SolveSummary {
        converged: res.converged,
        iterations: res.iterations,
        final_residual_norm: res.final_residual_norm,
        interior_residual_norm: res.interior_residual_norm,
        nbc_residual: res.nbc_residual,
        initial_derivative_norm: res.initial_derivative_norm,
        final_velocity_norm: final_velocity_norm(traj),
        lambda_end: res.lambda_end,
        action: action::evaluate(traj, spectrum, &couplings)?,
        collapse: traj.collapse_metrics(spectrum).ok(),
    };
    let manifest = Manifest {
        version: VERSION,
        command: invocation,
        seed: None,
        config: &cfg,
        slow_variation_epsilon: slow_variation(&cfg, &couplings),
        degenerate_modes,
        result: &summary,
    };
    write_json(&dir, "manifest.json", &manifest)?;
    println!(
        "converged={} iterations={} residual={:e} nbc={:e} action={}",
        summary.converged, summary.iterations, summary.final_residual_norm, summary.nbc_residual, summary.action.total
    );
    if !res.converged {
        bail!(NotConverged(format!(
            "solver stopped after {} iterations with residual {:e} (tolerance {:e})",
            res.iterations, res.final_residual_norm, cfg.solve.residual_tol
        )));
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct EnsembleSummary {
    converged_fraction: f64,
    min_converged_fraction: f64,
    n_collapsed: usize,
    n_uncollapsed: usize,
    n_diverged: usize,
}

pub fn ensemble(args: &RunArgs, invocation: &[String]) -> Result<ExitCode> {
    let cfg = load(args)?;
    let Some(ens) = cfg.ensemble.clone() else {
        bail!("{}: the ensemble command needs an \"ensemble\" section", args.config.display());
    };
    let seed = args.seed.unwrap_or(ens.seed);
    if args.threads == 0 {
        bail!("--threads must be >= 1");
    }
    let dir = cfg.output.directory.clone();
    let couplings = cfg.couplings()?;
    let degenerate_modes = degeneracy_warnings(&cfg);
    let setup = EnsembleSetup {
        spectrum: cfg.model.spectrum.clone(),
        couplings: couplings.clone(),
        t_i: cfg.grid.t_i,
        n_nodes: cfg.grid.n_nodes,
        initial: cfg.model.initial.clone(),
        solve: cfg.solve.clone(),
        thresholds: ens.thresholds,
        threads: args.threads,
    };
    let out = run_ensemble_detailed(&setup, &ens.distribution, ens.n, seed, cfg.output.retain_trajectories)?;
    let report = &out.report;
    write_json(&dir, "report.json", report)?;
    report.write_frequency_csv(create(&dir, "frequencies.csv")?)?;
    if !out.trajectories.is_empty() {
        let tdir = dir.join("trajectories");
        fs::create_dir_all(&tdir)?;
        for (i, traj) in &out.trajectories {
            write_trajectory(&cfg, &tdir, &format!("realization_{i:05}"), traj)?;
        }
    }
    let summary = EnsembleSummary {
        converged_fraction: report.converged_fraction(),
        min_converged_fraction: ens.min_converged_fraction,
        n_collapsed: report.n_collapsed,
        n_uncollapsed: report.n_uncollapsed,
        n_diverged: report.n_diverged,
    };
    let manifest = Manifest {
        version: VERSION,
        command: invocation,
        seed: Some(seed),
        config: &cfg,
        slow_variation_epsilon: report.slow_variation_epsilon,
        degenerate_modes,
        result: &summary,
    };
    write_json(&dir, "manifest.json", &manifest)?;
    println!(
        "n={} collapsed={} uncollapsed={} diverged={} frequencies=[{}]",
        report.n_realizations,
        report.n_collapsed,
        report.n_uncollapsed,
        report.n_diverged,
        report.frequencies.iter().map(|f| fmt_f64(*f)).collect::<Vec<_>>().join(", ")
    );
    if summary.converged_fraction < ens.min_converged_fraction {
        bail!(NotConverged(format!(
            "converged fraction {} is below the required {}",
            summary.converged_fraction, ens.min_converged_fraction
        )));
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct ActionReport {
    action: ActionBreakdown,
    /// `max |∂S/∂C*|` over interior nodes `2..N-1` by central differences.
    stationarity_norm: f64,
}

pub fn action(config: &Path, trajectory: &Path) -> Result<ExitCode> {
    let cfg = RunConfig::load(config)?;
    let couplings = cfg.couplings()?;
    let grid = cfg.time_grid()?;
    let spectrum = &cfg.model.spectrum;
    let file = File::open(trajectory).with_context(|| format!("opening {}", trajectory.display()))?;
    let is_json = trajectory.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let traj = if is_json {
        read_trajectory_json(file)?
    } else {
        read_trajectory_csv(file, grid, spectrum.j_count(), spectrum.k_count())?
    };
    traj.check_spectrum(spectrum)?;
    let breakdown = action::evaluate(&traj, spectrum, &couplings)?;
    let fd = action::action_gradient_fd(&traj, spectrum, &couplings, action::default_fd_step(&traj))?;
    let grad = action::conjugate_pairing(&fd);
    let m = traj.n_modes();
    let n = traj.n_nodes();
    let stationarity_norm = if n > 3 { grad[2 * m..(n - 1) * m].iter().map(|c| c.norm()).fold(0.0, f64::max) } else { 0.0 };
    let report = ActionReport { action: breakdown, stationarity_norm };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(ExitCode::SUCCESS)
}

pub fn verify(list: bool, inject_sign_error: bool) -> Result<ExitCode> {
    if list {
        for name in CHECK_NAMES {
            println!("{name}");
        }
        return Ok(ExitCode::SUCCESS);
    }
    let outcomes = run_battery(BatteryOptions { inject_sign_error })?;
    let mut failed = 0;
    for o in &outcomes {
        let status = if o.passed { "PASS" } else { "FAIL" };
        println!("{status} {:<26} {:>12.3e} {:<12} {}", o.name, o.value, o.tolerance, o.detail);
        failed += usize::from(!o.passed);
    }
    println!("{} of {} checks passed", outcomes.len() - failed, outcomes.len());
    if failed > 0 {
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct SweepRow {
    mu: f64,
    nu: f64,
    tau: f64,
    duration: f64,
    converged: bool,
    iterations: usize,
    final_residual_norm: Option<f64>,
    nbc_residual: Option<f64>,
    action: Option<f64>,
    purity: Option<f64>,
    agreement_residual: Option<f64>,
    dominant_j: Option<usize>,
    error: Option<String>,
}

fn values_or(list: &[f64], base: f64) -> Vec<f64> {
    if list.is_empty() {
        vec![base]
    } else {
        list.to_vec()
    }
}

pub fn sweep(args: &RunArgs, invocation: &[String]) -> Result<ExitCode> {
    let cfg = load(args)?;
    let dir = cfg.output.directory.clone();
    let base = cfg.couplings()?;
    let grid = cfg.time_grid()?;
    let spectrum = &cfg.model.spectrum;
    let axes = cfg.sweep.clone().unwrap_or_default();
    let family = cfg.kernel.family();

    let mut rows = Vec::new();
    for &mu in &values_or(&axes.mu, base.mu()) {
        for &nu in &values_or(&axes.nu, base.nu()) {
            for &tau in &values_or(&axes.tau, base.tau()) {
                for &duration in &values_or(&axes.duration, grid.duration()) {
                    let couplings = base.with_mu_nu(mu, nu).with_kernel(KernelSpec::new(family, tau)?);
                    let g: TimeGrid = grid.with_duration(duration)?;
                    rows.push(sweep_point(&cfg, &couplings, &g, spectrum)?);
                }
            }
        }
    }
    let mut w = csv::Writer::from_writer(create(&dir, "sweep.csv")?);
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let n_converged = rows.iter().filter(|r| r.converged).count();
    let manifest = Manifest {
        version: VERSION,
        command: invocation,
        seed: None,
        config: &cfg,
        slow_variation_epsilon: slow_variation(&cfg, &base),
        degenerate_modes: degeneracy_warnings(&cfg),
        result: serde_json::json!({ "points": rows.len(), "converged": n_converged }),
    };
    write_json(&dir, "manifest.json", &manifest)?;
    println!("{n_converged} of {} sweep points converged", rows.len());
    if n_converged == 0 {
        bail!(NotConverged("no sweep point converged".into()));
    }
    Ok(ExitCode::SUCCESS)
}

fn sweep_point(
    cfg: &RunConfig,
    couplings: &Couplings,
    grid: &TimeGrid,
    spectrum: &retrocausal::ModeSpectrum,
) -> Result<SweepRow> {
    let mut row = SweepRow {
        mu: couplings.mu(),
        nu: couplings.nu(),
        tau: couplings.tau(),
        duration: grid.duration(),
        converged: false,
        iterations: 0,
        final_residual_norm: None,
        nbc_residual: None,
        action: None,
        purity: None,
        agreement_residual: None,
        dominant_j: None,
        error: None,
    };
    let res = match solve_bvp(&cfg.model.initial, spectrum, couplings, grid, &cfg.solve) {
        Ok(r) => r,
        Err(e @ (CoreError::NumericalBlowup { .. } | CoreError::Singular(_))) => {
            row.error = Some(e.to_string());
            return Ok(row);
        }
        Err(e) => return Err(e.into()),
    };
    row.converged = res.converged;
    row.iterations = res.iterations;
    row.final_residual_norm = Some(res.final_residual_norm);
    row.nbc_residual = Some(res.nbc_residual);
    row.action = Some(action::evaluate(&res.trajectory, spectrum, couplings)?.total);
    if let Ok(m) = res.trajectory.collapse_metrics(spectrum) {
        row.purity = Some(m.purity);
        row.agreement_residual = Some(m.agreement_residual);
        row.dominant_j = Some(m.dominant_j);
    }
    Ok(row)
}
