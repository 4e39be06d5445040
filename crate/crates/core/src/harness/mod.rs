//! Experiment orchestration: single runs on either backend, buoyancy sweeps,
//! threshold bisections and the backend comparison, with their artifacts.

pub mod config;

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{parse_grid, Backend, DensityFamily, FlowFamily, Overrides, RunConfig};

use crate::chemotaxis::{gaussian_bump, CoupledOptions, CoupledSolver, CoupledState, DensityState};
use crate::diagnostics::{
    check_record, detect_blowup, fit_quench_rate, g_scaling_report, snapshot, write_csv, BlowupVerdict, DiagnosticsRecord, GScalingPoint,
    GScalingReport, QuenchFit, Recorder,
};
use crate::error::{invalid, Error, Result};
use crate::galerkin::{
    assemble_tensors, integrate_galerkin, project_initial_data, reconstruct, write_tensors, GalerkinBasis,
};
use crate::geometry::{write_field_dump, Grid, ScalarField, VectorField};
use crate::spectral::sine_mode;
use crate::stokes::{stokes_eigenbasis, velocity_from_streamfunction, FlowState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Quenched,
    BlowupSuspected,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub g: f64,
    pub verdict: Verdict,
    /// Trigger time and reason when the verdict is a suspected blow-up.
    pub blowup: Option<(f64, String)>,
    pub final_record: DiagnosticsRecord,
    pub csv_path: Option<PathBuf>,
    pub quench_fit: QuenchFit,
    pub steps: u64,
    /// Largest density over all records.
    pub peak_rho: f64,
    pub u_l2_sq_integral: f64,
    pub u_h1_sq_integral: f64,
    pub wall_time_s: f64,
}

/// Run output including the trajectory and the last state.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub result: RunResult,
    pub records: Vec<DiagnosticsRecord>,
    pub final_state: CoupledState,
}

pub fn initial_density(cfg: &RunConfig, grid: &Grid) -> Result<ScalarField> {
    match cfg.density {
        DensityFamily::Gaussian => gaussian_bump(grid, cfg.mass, cfg.x0, cfg.y0, cfg.sigma),
        DensityFamily::Mode => Ok(sine_mode(grid, cfg.mode_k1, cfg.mode_k2).scaled(cfg.amplitude)),
        DensityFamily::Zero => Ok(ScalarField::zeros(*grid)),
    }
}

pub fn initial_streamfunction(cfg: &RunConfig, grid: &Grid) -> Result<ScalarField> {
    let (lx, ly) = (grid.domain.lx, grid.domain.ly);
    let pi = std::f64::consts::PI;
    Ok(match cfg.flow {
        FlowFamily::Rest => ScalarField::zeros(*grid),
        FlowFamily::Sine => ScalarField::from_fn(*grid, |x, y| {
            cfg.flow_amplitude * (pi * x / lx).sin().powi(2) * (pi * y / ly).sin().powi(2)
        }),
        FlowFamily::Stokes => stokes_eigenbasis(grid, 1)?.remove(0).psi.scaled(cfg.flow_amplitude),
    })
}

/// Executes one configured run and writes its artifacts when `out` is set.
pub fn run(cfg: &RunConfig) -> Result<RunResult> {
    run_detailed(cfg).map(|o| o.result)
}

pub fn run_detailed(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let clock = Instant::now();
    let mut outcome = match cfg.backend {
        Backend::Fd => run_fd(cfg)?,
        Backend::Galerkin => run_galerkin(cfg)?,
    };
    outcome.result.wall_time_s = clock.elapsed().as_secs_f64();
    if let Some(dir) = &cfg.out {
        write_artifacts(dir, cfg, &mut outcome)?;
    }
    Ok(outcome)
}

fn write_artifacts(dir: &Path, cfg: &RunConfig, o: &mut RunOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    let csv = dir.join("diag.csv");
    write_csv(BufWriter::new(fs::File::create(&csv)?), &o.records)?;
    o.result.csv_path = Some(csv);
    if cfg.dump_fields {
        let fields = dir.join("fields");
        fs::create_dir_all(&fields)?;
        let s = &o.final_state;
        write_field_dump(BufWriter::new(fs::File::create(fields.join("rho_final.dump"))?), &s.density.rho, s.t, "rho")?;
        write_field_dump(BufWriter::new(fs::File::create(fields.join("psi_final.dump"))?), &s.flow.psi, s.t, "psi")?;
    }
    write_json(&dir.join("summary.json"), &o.result)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn classify(
    cfg: &RunConfig,
    records: &[DiagnosticsRecord],
    blowup: Option<(f64, String)>,
) -> Result<(Verdict, QuenchFit, Option<(f64, String)>)> {
    let eps = cfg.quench_threshold()?;
    let fit = fit_quench_rate(records, eps);
    if blowup.is_some() {
        return Ok((Verdict::BlowupSuspected, fit, blowup));
    }
    let last = records.last().expect("records start with the initial state");
    let small = last.l2_rho * last.l2_rho < eps;
    let verdict = if small && (fit.rate.is_some() || last.l2_rho == 0.0) { Verdict::Quenched } else { Verdict::Inconclusive };
    Ok((verdict, fit, None))
}

fn finish(
    cfg: &RunConfig,
    records: Vec<DiagnosticsRecord>,
    blowup: Option<(f64, String)>,
    final_state: CoupledState,
    steps: u64,
    u_integrals: (f64, f64),
) -> Result<RunOutcome> {
    let (verdict, quench_fit, blowup) = classify(cfg, &records, blowup)?;
    let peak_rho = records.iter().map(|r| r.linf_rho).fold(0.0, f64::max);
    let result = RunResult {
        g: cfg.g,
        verdict,
        blowup,
        final_record: *records.last().expect("nonempty"),
        csv_path: None,
        quench_fit,
        steps,
        peak_rho,
        u_l2_sq_integral: u_integrals.0,
        u_h1_sq_integral: u_integrals.1,
        wall_time_s: 0.0,
    };
    Ok(RunOutcome { result, records, final_state })
}

fn run_fd(cfg: &RunConfig) -> Result<RunOutcome> {
    let grid = cfg.grid()?;
    let physics = cfg.physics();
    let mut state = CoupledState::new(initial_density(cfg, &grid)?, initial_streamfunction(cfg, &grid)?, physics)?;
    let mut solver = CoupledSolver::new(
        grid,
        CoupledOptions { physics, cfl: cfg.cfl, ceiling: cfg.linf_ceiling, max_halvings: cfg.max_halvings },
    );
    let ceilings = cfg.ceilings();
    let mut rec = Recorder::start(&state);
    let mut blowup = None;
    while cfg.t_end - state.t > 1e-9 * cfg.dt_target {
        let dt_target = cfg.dt_target.min(cfg.t_end - state.t);
        let stepped = if cfg.frozen_density {
            frozen_step(&mut solver, &state, cfg.g, dt_target)
        } else {
            solver.step(&state, cfg.g, dt_target).map(|(s, info)| (s, info.energy.residual, info.dt))
        };
        match stepped {
            Ok((next, residual, dt)) => {
                state = next;
                let keep = (rec.steps() + 1) % cfg.snapshot_stride as u64 == 0;
                rec.observe(&state, residual, dt, keep);
                if keep {
                    let last = rec.records.len() - 1;
                    if let BlowupVerdict::BlowupSuspected { t, reason } = check_record(&rec.records, last, &ceilings) {
                        blowup = Some((t, reason));
                        break;
                    }
                }
            }
            Err(Error::BlowupSuspected { t, reason }) => {
                blowup = Some((t, reason));
                break;
            }
            Err(Error::Numerical(reason)) => {
                blowup = Some((state.t, reason));
                break;
            }
            Err(e) => return Err(e),
        }
    }
    rec.push(&state);
    let steps = rec.steps();
    let integrals = (rec.u_l2_sq_integral, rec.u_h1_sq_integral);
    finish(cfg, rec.records, blowup, state, steps, integrals)
}

/// Flow step under a density held fixed.
fn frozen_step(solver: &mut CoupledSolver, s: &CoupledState, g: f64, dt: f64) -> Result<(CoupledState, f64, f64)> {
    let (flow, energy) = solver.flow_solver().step(&s.flow, &s.density.rho, g, dt)?;
    let t = s.t + dt;
    let density = DensityState { t, ..s.density.clone() };
    Ok((CoupledState { density, flow, t }, energy.residual, dt))
}

/// RK4 step for the modal system, small enough for the stiffest mode.
fn galerkin_dt(cfg: &RunConfig, lambda_max: f64) -> f64 {
    cfg.dt_target.min(0.5 / lambda_max)
}

fn run_galerkin(cfg: &RunConfig) -> Result<RunOutcome> {
    let grid = cfg.grid()?;
    let physics = cfg.physics();
    let basis = GalerkinBasis::new(grid, cfg.modes_n, cfg.modes_m)?;
    let tensors = assemble_tensors(&basis);
    if let Some(dir) = &cfg.out {
        fs::create_dir_all(dir)?;
        write_tensors(BufWriter::new(fs::File::create(dir.join("tensors.galten"))?), &tensors, &grid)?;
    }
    let s0 = project_initial_data(&initial_density(cfg, &grid)?, &initial_streamfunction(cfg, &grid)?, &basis)?;
    let stiff = tensors.lambda.iter().chain(&tensors.eta).fold(0.0_f64, |a, b| a.max(*b));
    let traj = integrate_galerkin(&s0, &tensors, cfg.g, cfg.t_end, galerkin_dt(cfg, stiff), cfg.snapshot_stride, physics)?;
    let mut records: Vec<DiagnosticsRecord> = Vec::with_capacity(traj.states.len());
    let mut last = None;
    let mut u_int = (0.0, 0.0);
    for (k, s) in traj.states.iter().enumerate() {
        let rec = reconstruct(s, &basis)?;
        let state = CoupledState {
            density: DensityState::new(rec.rho, physics, s.t),
            flow: FlowState::from_streamfunction(rec.psi, s.t),
            t: s.t,
        };
        let r = snapshot(&state, records.last());
        if let Some(p) = records.last() {
            let dt = r.t - p.t;
            u_int.0 += 0.5 * dt * (p.l2_u.powi(2) + r.l2_u.powi(2));
            u_int.1 += 0.5 * dt * (p.l2_u.powi(2) + p.h1_u.powi(2) + r.l2_u.powi(2) + r.h1_u.powi(2));
        }
        records.push(DiagnosticsRecord { step: k as u64, ..r });
        last = Some(state);
    }
    let blowup = traj
        .overflow_at
        .map(|t| (t, "mode amplitude overflow".to_string()))
        .or_else(|| match detect_blowup(&records, &cfg.ceilings()) {
            BlowupVerdict::BlowupSuspected { t, reason } => Some((t, reason)),
            BlowupVerdict::Alive => None,
        });
    let steps = traj.states.len().saturating_sub(1) as u64;
    finish(cfg, records, blowup, last.expect("trajectory holds the initial state"), steps, u_int)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendComparison {
    pub t: f64,
    pub rel_l2_rho: f64,
    pub rel_l2_u: f64,
    pub fd_verdict: Verdict,
    pub galerkin_verdict: Verdict,
}

fn rel_diff(a: f64, diff: f64) -> f64 {
    if diff == 0.0 {
        0.0
    } else {
        diff / a
    }
}

fn vector_l2(u: &VectorField) -> f64 {
    (u.x_component().norm_l2().powi(2) + u.y_component().norm_l2().powi(2)).sqrt()
}

/// Runs both backends from the same data and compares the final density and
/// velocity in relative `L^2`.
pub fn compare_backends(cfg: &RunConfig) -> Result<BackendComparison> {
    let quiet = RunConfig { out: None, ..cfg.clone() };
    let fd = run_detailed(&RunConfig { backend: Backend::Fd, ..quiet.clone() })?;
    let gal = run_detailed(&RunConfig { backend: Backend::Galerkin, ..quiet })?;
    let (a, b) = (&fd.final_state, &gal.final_state);
    let drho = a.density.rho.zip_map(&b.density.rho, |x, y| x - y).norm_l2();
    let ua = velocity_from_streamfunction(&a.flow.psi);
    let ub = velocity_from_streamfunction(&b.flow.psi);
    let du = VectorField::from_components(
        ua.x_component().zip_map(&ub.x_component(), |x, y| x - y),
        ua.y_component().zip_map(&ub.y_component(), |x, y| x - y),
    );
    let report = BackendComparison {
        t: a.t,
        rel_l2_rho: rel_diff(a.density.rho.norm_l2(), drho),
        rel_l2_u: rel_diff(vector_l2(&ua), vector_l2(&du)),
        fd_verdict: fd.result.verdict,
        galerkin_verdict: gal.result.verdict,
    };
    if let Some(dir) = &cfg.out {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("summary.json"), &report)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub g: f64,
    pub result: std::result::Result<RunResult, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
    pub scaling: Option<GScalingReport>,
    /// Whether verdicts switch at most once from not-quenched to quenched in
    /// increasing `g`.
    pub monotone: bool,
}

fn sweep_config(base: &RunConfig, g: f64, k: usize) -> RunConfig {
    RunConfig { g, out: base.out.as_ref().map(|d| d.join(format!("g{k:03}"))), ..base.clone() }
}

/// Independent runs over `g_list`, `workers` at a time. Failures stay local
/// to their entry.
pub fn sweep_g(base: &RunConfig, g_list: &[f64], workers: usize) -> Result<SweepReport> {
    if g_list.is_empty() {
        return Err(invalid("sweep needs at least one g"));
    }
    let job = |(k, &g): (usize, &f64)| SweepEntry { g, result: run(&sweep_config(base, g, k)).map_err(|e| e.to_string()) };
    let entries: Vec<SweepEntry> = if workers <= 1 {
        g_list.iter().enumerate().map(job).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Numerical(format!("worker pool: {e}")))?;
        pool.install(|| g_list.par_iter().enumerate().map(job).collect())
    };
    let points: Vec<GScalingPoint> = entries
        .iter()
        .filter_map(|e| e.result.as_ref().ok())
        .map(|r| GScalingPoint { g: r.g, u_l2_sq_integral: r.u_l2_sq_integral, u_h1_sq_integral: r.u_h1_sq_integral })
        .collect();
    let scaling = g_scaling_report(&points).ok();
    let mut order: Vec<_> = entries.iter().filter_map(|e| e.result.as_ref().ok()).collect();
    order.sort_by(|a, b| a.g.total_cmp(&b.g));
    let flags: Vec<bool> = order.iter().map(|r| r.verdict == Verdict::Quenched).collect();
    let monotone = flags.windows(2).all(|w| w[0] <= w[1]);
    let report = SweepReport { entries, scaling, monotone };
    if let Some(dir) = &base.out {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("summary.json"), &report)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
    pub runs: usize,
}

/// Midpoint bisection on a predicate that is false at `lo` and true at `hi`.
fn bisect(lo: f64, hi: f64, iters: u32, mut holds: impl FnMut(f64) -> Result<bool>, what: &str) -> Result<Bracket> {
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(invalid(format!("{what} bracket needs lo < hi, got [{lo}, {hi}]")));
    }
    if holds(lo)? {
        return Err(invalid(format!("{what} bracket invalid: already satisfied at lo = {lo}")));
    }
    if !holds(hi)? {
        return Err(invalid(format!("{what} bracket invalid: not satisfied at hi = {hi}")));
    }
    let mut b = Bracket { lo, hi, runs: 2 };
    for _ in 0..iters {
        let mid = 0.5 * (b.lo + b.hi);
        b.runs += 1;
        if holds(mid)? {
            b.hi = mid;
        } else {
            b.lo = mid;
        }
    }
    Ok(b)
}

/// Smallest buoyancy that quenches, bracketed.
pub fn find_gstar(base: &RunConfig, g_lo: f64, g_hi: f64, iters: u32) -> Result<Bracket> {
    let quiet = RunConfig { out: None, ..base.clone() };
    bisect(g_lo, g_hi, iters, |g| Ok(run(&RunConfig { g, ..quiet.clone() })?.verdict == Verdict::Quenched), "g*")
}

/// Smallest Gaussian mass that triggers the blow-up verdict, bracketed.
pub fn find_mass_threshold(base: &RunConfig, m_lo: f64, m_hi: f64, iters: u32) -> Result<Bracket> {
    if base.density != DensityFamily::Gaussian {
        return Err(invalid("mass bisection needs the gaussian density family"));
    }
    let quiet = RunConfig { out: None, ..base.clone() };
    bisect(
        m_lo,
        m_hi,
        iters,
        |mass| Ok(run(&RunConfig { mass, ..quiet.clone() })?.verdict == Verdict::BlowupSuspected),
        "mass",
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> RunConfig {
        RunConfig { nx: 12, ny: 12, t_end: 0.05, dt_target: 5e-3, snapshot_stride: 1, ..RunConfig::default() }
    }

    #[test]
    fn zero_data_quenches() {
        let r = run(&RunConfig { density: DensityFamily::Zero, g: 10.0, ..tiny() }).unwrap();
        assert_eq!(r.verdict, Verdict::Quenched);
        assert_eq!(r.final_record.l2_rho, 0.0);
        assert_eq!(r.steps, 10);
    }

    #[test]
    fn bisection_contract() {
        let b = bisect(0.0, 1.0, 10, |x| Ok(x > 0.3), "x").unwrap();
        assert!(b.lo <= 0.3 && b.hi > 0.3 && b.hi - b.lo <= 1.0 / 1024.0 + 1e-15);
        assert_eq!(bisect(0.0, 1.0, 0, |x| Ok(x > 0.3), "x").unwrap(), Bracket { lo: 0.0, hi: 1.0, runs: 2 });
        assert!(bisect(0.0, 1.0, 3, |_| Ok(true), "x").is_err());
        assert!(bisect(0.0, 1.0, 3, |_| Ok(false), "x").is_err());
    }

    #[test]
    fn result_json_round_trip() {
        let r = run(&RunConfig { g: 3.0, ..tiny() }).unwrap();
        let text = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<RunResult>(&text).unwrap(), r);
    }
}
