//! C interface: an opaque simulation handle, status codes and a
//! thread-local last-error message.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use ks_stokes::chemotaxis::{CoupledOptions, CoupledSolver, CoupledState};
use ks_stokes::diagnostics::{moser_partial_product, Recorder};
use ks_stokes::geometry::{build_grid, ScalarField};
use ks_stokes::harness::{initial_density, initial_streamfunction, RunConfig};
use ks_stokes::spectral::solve_poisson;
use ks_stokes::Error;

/// Status returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KsStatus {
    Ok = 0,
    InvalidArgument = 1,
    Numerical = 2,
    BlowupSuspected = 3,
    CflViolation = 4,
    Config = 5,
    Parse = 6,
    Io = 7,
    NullPointer = 8,
    Panic = 9,
}

/// Snapshot of the scalar diagnostics of a simulation.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KsDiagnostics {
    pub t: f64,
    pub mass: f64,
    pub l2_rho: f64,
    pub h1_rho: f64,
    pub linf_rho: f64,
    pub min_rho: f64,
    pub l2_u: f64,
    pub h1_u: f64,
    pub flux: f64,
    pub moment: f64,
    pub energy_residual: f64,
    pub criterion_integral: f64,
}

/// Opaque coupled simulation.
pub struct KsSimulation {
    solver: CoupledSolver,
    state: CoupledState,
    recorder: Recorder,
    g: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> KsStatus {
    match e {
        Error::InvalidArgument(_) => KsStatus::InvalidArgument,
        Error::Numerical(_) => KsStatus::Numerical,
        Error::BlowupSuspected { .. } => KsStatus::BlowupSuspected,
        Error::CflViolation { .. } => KsStatus::CflViolation,
        Error::Config(_) => KsStatus::Config,
        Error::Parse { .. } => KsStatus::Parse,
        Error::Io(_) | Error::Json(_) => KsStatus::Io,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (KsStatus, String)>) -> KsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KsStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside ks_stokes".into());
            KsStatus::Panic
        }
    }
}

fn lift<T>(r: ks_stokes::Result<T>) -> Result<T, (KsStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (KsStatus, String) {
    (KsStatus::NullPointer, format!("{what} is null"))
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ks_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ks_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

fn new_simulation(cfg: &RunConfig) -> ks_stokes::Result<KsSimulation> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let physics = cfg.physics();
    let state = CoupledState::new(initial_density(cfg, &grid)?, initial_streamfunction(cfg, &grid)?, physics)?;
    let options = CoupledOptions { physics, cfl: cfg.cfl, ceiling: cfg.linf_ceiling, max_halvings: cfg.max_halvings };
    Ok(KsSimulation {
        solver: CoupledSolver::new(grid, options),
        recorder: Recorder::start(&state),
        state,
        g: cfg.g,
    })
}

unsafe fn store(out: *mut *mut KsSimulation, sim: KsSimulation) {
    *out = Box::into_raw(Box::new(sim));
}

/// Simulation on `[0, lx] x [0, ly]` with `nx * ny` interior nodes, zero
/// density and fluid at rest.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn ks_simulation_new(
    lx: f64,
    ly: f64,
    nx: usize,
    ny: usize,
    g: f64,
    out: *mut *mut KsSimulation,
) -> KsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = RunConfig { lx, ly, nx, ny, g, density: ks_stokes::harness::DensityFamily::Zero, ..RunConfig::default() };
        store(out, lift(new_simulation(&cfg))?);
        Ok(())
    })
}

/// Simulation initialized from a TOML run configuration.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ks_simulation_from_toml(toml: *const c_char, out: *mut *mut KsSimulation) -> KsStatus {
    guard(|| {
        if toml.is_null() {
            return Err(null("toml"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(toml)
            .to_str()
            .map_err(|e| (KsStatus::InvalidArgument, format!("config is not UTF-8: {e}")))?;
        let cfg = lift(RunConfig::from_toml_str(text))?;
        store(out, lift(new_simulation(&cfg))?);
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `sim` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ks_simulation_free(sim: *mut KsSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Number of grid nodes, or 0 for a null handle.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ks_simulation_len(sim: *const KsSimulation) -> usize {
    sim.as_ref().map_or(0, |s| s.state.grid().len())
}

/// Current time, or NaN for a null handle.
///
/// # Safety
/// `sim` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ks_simulation_time(sim: *const KsSimulation) -> f64 {
    sim.as_ref().map_or(f64::NAN, |s| s.state.t)
}

/// Replaces the density with `len` node values, row index `i * ny + j`.
///
/// # Safety
/// `values` must point to `len` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn ks_simulation_set_density(sim: *mut KsSimulation, values: *const f64, len: usize) -> KsStatus {
    guard(|| {
        let sim = sim.as_mut().ok_or_else(|| null("sim"))?;
        if values.is_null() {
            return Err(null("values"));
        }
        let grid = *sim.state.grid();
        if len != grid.len() {
            return Err((KsStatus::InvalidArgument, format!("expected {} values, got {len}", grid.len())));
        }
        let rho = lift(ScalarField::from_values(grid, std::slice::from_raw_parts(values, len).to_vec()))?;
        let physics = sim.solver.options.physics;
        let state = lift(CoupledState::new(rho, sim.state.flow.psi.clone(), physics))?;
        sim.state = CoupledState { t: sim.state.t, ..state };
        sim.state.density.t = sim.state.t;
        sim.state.flow.t = sim.state.t;
        sim.recorder = Recorder::start(&sim.state);
        Ok(())
    })
}

/// Copies the density into `out`, which holds `len` doubles.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ks_simulation_density(sim: *const KsSimulation, out: *mut f64, len: usize) -> KsStatus {
    guard(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        copy_out(sim.state.density.rho.values(), out, len)
    })
}

/// Copies the stream function into `out`, which holds `len` doubles.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ks_simulation_streamfunction(sim: *const KsSimulation, out: *mut f64, len: usize) -> KsStatus {
    guard(|| {
        let sim = sim.as_ref().ok_or_else(|| null("sim"))?;
        copy_out(sim.state.flow.psi.values(), out, len)
    })
}

unsafe fn copy_out(src: &[f64], out: *mut f64, len: usize) -> Result<(), (KsStatus, String)> {
    if out.is_null() {
        return Err(null("out"));
    }
    if len != src.len() {
        return Err((KsStatus::InvalidArgument, format!("expected room for {} values, got {len}", src.len())));
    }
    std::slice::from_raw_parts_mut(out, len).copy_from_slice(src);
    Ok(())
}

/// One coupled step of at most `dt_target`; the step taken goes to `dt_out`
/// when it is non-null. A suspected blow-up leaves the state unchanged.
///
/// # Safety
/// `sim` must be a live handle; `dt_out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn ks_simulation_step(sim: *mut KsSimulation, dt_target: f64, dt_out: *mut f64) -> KsStatus {
    guard(|| {
        let sim = sim.as_mut().ok_or_else(|| null("sim"))?;
        let (next, info) = lift(sim.solver.step(&sim.state, sim.g, dt_target))?;
        sim.recorder.observe(&next, info.energy.residual, info.dt, false);
        sim.state = next;
        if !dt_out.is_null() {
            *dt_out = info.dt;
        }
        Ok(())
    })
}

/// Steps until `t_end` with targets of `dt_target`.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ks_simulation_advance(sim: *mut KsSimulation, t_end: f64, dt_target: f64) -> KsStatus {
    guard(|| {
        let sim = sim.as_mut().ok_or_else(|| null("sim"))?;
        if !(dt_target > 0.0) || !t_end.is_finite() {
            return Err((KsStatus::InvalidArgument, "advance needs dt_target > 0 and a finite t_end".into()));
        }
        while t_end - sim.state.t > 1e-9 * dt_target {
            let (next, info) = lift(sim.solver.step(&sim.state, sim.g, dt_target.min(t_end - sim.state.t)))?;
            sim.recorder.observe(&next, info.energy.residual, info.dt, false);
            sim.state = next;
        }
        Ok(())
    })
}

/// Diagnostics of the current state.
///
/// # Safety
/// `sim` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ks_simulation_diagnostics(sim: *mut KsSimulation, out: *mut KsDiagnostics) -> KsStatus {
    guard(|| {
        let sim = sim.as_mut().ok_or_else(|| null("sim"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        sim.recorder.push(&sim.state);
        let r = *sim.recorder.records.last().expect("recorder holds the initial state");
        *out = KsDiagnostics {
            t: r.t,
            mass: r.mass,
            l2_rho: r.l2_rho,
            h1_rho: r.h1_rho,
            linf_rho: r.linf_rho,
            min_rho: r.min_rho,
            l2_u: r.l2_u,
            h1_u: r.h1_u,
            flux: r.flux,
            moment: r.moment,
            energy_residual: r.energy_residual,
            criterion_integral: r.criterion_integral,
        };
        Ok(())
    })
}

/// Solves `-laplacian u = f` with zero Dirichlet data on an `nx * ny`
/// interior grid.
///
/// # Safety
/// `f` and `out` must each point to `nx * ny` doubles.
#[no_mangle]
pub unsafe extern "C" fn ks_solve_poisson(lx: f64, ly: f64, nx: usize, ny: usize, f: *const f64, out: *mut f64) -> KsStatus {
    guard(|| {
        if f.is_null() {
            return Err(null("f"));
        }
        let grid = lift(build_grid(lx, ly, nx, ny))?;
        let rhs = lift(ScalarField::from_values(grid, std::slice::from_raw_parts(f, grid.len()).to_vec()))?;
        copy_out(solve_poisson(&rhs).values(), out, grid.len())
    })
}

/// `prod_{j=1}^n (2^{j+2} - d) / (2^{j+2} - 2d)` for `d` in {2, 3}.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ks_moser_partial_product(n: u32, d: u32, out: *mut f64) -> KsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = lift(moser_partial_product(n, d))?;
        Ok(())
    })
}
