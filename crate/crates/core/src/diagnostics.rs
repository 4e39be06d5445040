//! Functionals tracked along a trajectory: norms, wall flux, weighted moment,
//! energy balance, the regularity-criterion integral, blow-up triggers and
//! the post-entry quench-rate fit.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::chemotaxis::{chemo_flux_parts, CoupledState, FaceFlux, Physics};
use crate::error::{invalid, Result};
use crate::geometry::{dirichlet_energy, integrate, stencil_wall_flux, Grid, Kahan, ScalarField};
use crate::stokes::{face_velocity, FaceVelocity};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub step: u64,
    pub t: f64,
    pub mass: f64,
    pub l2_rho: f64,
    pub h1_rho: f64,
    pub linf_rho: f64,
    pub min_rho: f64,
    pub l2_u: f64,
    pub h1_u: f64,
    /// `oint d rho / dn` in the form the discrete diffusion sees.
    pub flux: f64,
    /// `integral (y - Ly) rho`.
    pub moment: f64,
    /// Running time integral of the per-step energy-balance residual.
    pub energy_residual: f64,
    /// Running `integral_0^t ||rho||^2 ds`.
    pub criterion_integral: f64,
}

impl DiagnosticsRecord {
    pub fn is_finite(&self) -> bool {
        [
            self.t,
            self.mass,
            self.l2_rho,
            self.h1_rho,
            self.linf_rho,
            self.min_rho,
            self.l2_u,
            self.h1_u,
            self.flux,
            self.moment,
            self.energy_residual,
            self.criterion_integral,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

fn moment_of(rho: &ScalarField) -> f64 {
    let g = rho.grid();
    let ly = g.domain.ly;
    let mut acc = Kahan::default();
    for i in 0..g.nx {
        for j in 0..g.ny {
            acc.add((g.y(j) - ly) * rho.at(i, j));
        }
    }
    acc.value() * g.cell_area()
}

/// Record of `state`; the criterion integral is advanced from `prev` by the
/// trapezoid rule and the energy residual carried over unchanged.
pub fn snapshot(state: &CoupledState, prev: Option<&DiagnosticsRecord>) -> DiagnosticsRecord {
    let rho = &state.density.rho;
    let l2 = rho.norm_l2();
    let (criterion_integral, energy_residual, step) = match prev {
        Some(p) => (
            p.criterion_integral + 0.5 * (state.t - p.t) * (p.l2_rho * p.l2_rho + l2 * l2),
            p.energy_residual,
            p.step + 1,
        ),
        None => (0.0, 0.0, 0),
    };
    DiagnosticsRecord {
        step,
        t: state.t,
        mass: integrate(rho),
        l2_rho: l2,
        h1_rho: dirichlet_energy(rho).sqrt(),
        linf_rho: rho.max_abs(),
        min_rho: rho.min(),
        l2_u: state.flow.kinetic_l2_sq().max(0.0).sqrt(),
        h1_u: state.flow.dissipation().sqrt(),
        flux: stencil_wall_flux(rho, |_, _| 1.0),
        moment: moment_of(rho),
        energy_residual,
        criterion_integral,
    }
}

/// Accumulates step-resolved integrals between stored snapshots.
#[derive(Debug, Clone, Default)]
pub struct Recorder {
    pub records: Vec<DiagnosticsRecord>,
    step: u64,
    last_t: f64,
    last_l2_sq: f64,
    criterion: f64,
    residual: f64,
    /// `integral ||u||^2 dt` and `integral ||grad u||^2 dt`, trapezoidal.
    pub u_l2_sq_integral: f64,
    pub u_h1_sq_integral: f64,
    last_u: (f64, f64),
}

impl Recorder {
    pub fn start(state: &CoupledState) -> Self {
        let first = snapshot(state, None);
        Self {
            last_t: state.t,
            last_l2_sq: first.l2_rho * first.l2_rho,
            last_u: (first.l2_u.powi(2), first.h1_u.powi(2)),
            records: vec![first],
            ..Self::default()
        }
    }

    /// Folds in one completed step; stores a record when `keep` is set.
    pub fn observe(&mut self, state: &CoupledState, energy_residual: f64, dt: f64, keep: bool) {
        self.step += 1;
        let l2_sq = state.density.rho.norm_l2().powi(2);
        let dt_actual = state.t - self.last_t;
        self.criterion += 0.5 * dt_actual * (self.last_l2_sq + l2_sq);
        self.residual += energy_residual * dt;
        let u = (state.flow.kinetic_l2_sq().max(0.0), state.flow.dissipation());
        self.u_l2_sq_integral += 0.5 * dt_actual * (self.last_u.0 + u.0);
        self.u_h1_sq_integral += 0.5 * dt_actual * (self.last_u.1 + u.1);
        self.last_u = u;
        self.last_t = state.t;
        self.last_l2_sq = l2_sq;
        if keep {
            self.push(state);
        }
    }

    /// Stores a record of `state` unless the last one is already at its time.
    pub fn push(&mut self, state: &CoupledState) {
        if self.records.last().is_some_and(|r| r.step == self.step) {
            return;
        }
        let mut rec = snapshot(state, None);
        rec.step = self.step;
        rec.criterion_integral = self.criterion;
        rec.energy_residual = self.residual;
        self.records.push(rec);
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// Discrete weighted moment balance with weight `w = y - Ly`:
///
/// `integral rho u_y = d/dt integral w rho + integral d_y rho
///   - oint w d rho / dn - integral rho d_y c`
///
/// with every term in its finite-volume form and the time derivative by
/// centered differences. Returns the largest defect over interior samples.
pub fn weighted_moment_identity_residual(states: &[CoupledState], physics: Physics) -> Result<f64> {
    if states.len() < 3 {
        return Err(invalid(format!("moment residual needs at least 3 snapshots, got {}", states.len())));
    }
    let grid = *states[0].grid();
    let spacing = states[1].t - states[0].t;
    if !(spacing > 0.0) {
        return Err(invalid("snapshot times must increase"));
    }
    for w in states.windows(2) {
        if !w[1].grid().same_as(&grid) {
            return Err(invalid("snapshots live on different grids"));
        }
        if ((w[1].t - w[0].t) - spacing).abs() > 1e-9 * spacing.max(1e-300) + 1e-14 {
            return Err(invalid("moment residual needs uniformly spaced snapshots"));
        }
    }
    let ly = grid.domain.ly;
    let mut worst = 0.0_f64;
    for k in 1..states.len() - 1 {
        let s = &states[k];
        let rho = &s.density.rho;
        let faces = if physics.advection { face_velocity(&s.flow.psi) } else { FaceVelocity::zeros(&grid) };
        let parts = chemo_flux_parts(rho, &s.density.c, &faces);
        let lhs = flux_moment(&grid, &parts.advective);
        let dmoment = (moment_of(&states[k + 1].density.rho) - moment_of(&states[k - 1].density.rho)) / (2.0 * spacing);
        let rhs = dmoment + integral_dy(rho) - stencil_wall_flux(rho, |_, y| y - ly) - flux_moment(&grid, &parts.chemotactic);
        worst = worst.max((lhs - rhs).abs());
    }
    Ok(worst)
}

/// `integral (y - Ly) (-div F)`.
fn flux_moment(g: &Grid, f: &FaceFlux) -> f64 {
    let div = f.divergence(g);
    -moment_of(&div)
}

/// `integral d_y rho` with centered differences; telescopes to zero under
/// the Dirichlet condition, kept for completeness of the balance.
fn integral_dy(rho: &ScalarField) -> f64 {
    let g = rho.grid();
    let mut acc = Kahan::default();
    for i in 0..g.nx {
        for j in 0..g.ny {
            let (ii, jj) = (i as isize, j as isize);
            acc.add((rho.at_ext(ii, jj + 1) - rho.at_ext(ii, jj - 1)) / (2.0 * g.hy));
        }
    }
    acc.value() * g.cell_area()
}

/// Thresholds of the operational blow-up test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlowupCeilings {
    pub linf: f64,
    /// Growth of the criterion integral's rate that counts as acceleration.
    pub rate_growth: f64,
    /// The rate at record `k` is compared with the rate at record
    /// `k / rate_span`, one decade back in step count by default.
    pub rate_span: usize,
}

impl Default for BlowupCeilings {
    fn default() -> Self {
        Self { linf: 1e8, rate_growth: 10.0, rate_span: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "kebab-case")]
pub enum BlowupVerdict {
    Alive,
    BlowupSuspected { t: f64, reason: String },
}

impl BlowupVerdict {
    pub fn is_blowup(&self) -> bool {
        matches!(self, BlowupVerdict::BlowupSuspected { .. })
    }
}

fn criterion_rate(a: &DiagnosticsRecord, b: &DiagnosticsRecord) -> f64 {
    (b.criterion_integral - a.criterion_integral) / (b.t - a.t)
}

/// Trigger test for record `k` alone, given everything before it.
pub fn check_record(records: &[DiagnosticsRecord], k: usize, ceilings: &BlowupCeilings) -> BlowupVerdict {
    let r = &records[k];
    if !r.is_finite() {
        return BlowupVerdict::BlowupSuspected { t: r.t, reason: "non-finite diagnostics".into() };
    }
    if r.linf_rho > ceilings.linf {
        return BlowupVerdict::BlowupSuspected { t: r.t, reason: format!("max density {:.3e} above ceiling", r.linf_rho) };
    }
    let back = k / ceilings.rate_span.max(2);
    if back >= 1 && r.t > records[k - 1].t && records[back].t > records[back - 1].t {
        let now = criterion_rate(&records[k - 1], r);
        let then = criterion_rate(&records[back - 1], &records[back]);
        if now > 0.0 && now >= ceilings.rate_growth * then {
            return BlowupVerdict::BlowupSuspected {
                t: r.t,
                reason: format!("criterion rate grew {:.1}x since t = {:.4e}", now / then, records[back].t),
            };
        }
    }
    BlowupVerdict::Alive
}

/// First record that trips a trigger: NaN, `linf` above the ceiling, or the
/// criterion integral's rate growing `rate_growth`-fold within the last
/// `rate_span`-fold stretch of records.
pub fn detect_blowup(records: &[DiagnosticsRecord], ceilings: &BlowupCeilings) -> BlowupVerdict {
    for k in 0..records.len() {
        let v = check_record(records, k, ceilings);
        if v.is_blowup() {
            return v;
        }
    }
    BlowupVerdict::Alive
}

/// Minimum samples for a reported quench rate.
pub const QUENCH_MIN_SAMPLES: usize = 20;
/// Minimum coefficient of determination for a reported quench rate.
pub const QUENCH_MIN_R2: f64 = 0.99;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct QuenchFit {
    /// First time `||rho||^2` drops below the threshold.
    pub t_enter: Option<f64>,
    /// Decay rate of `||rho||^2` after entry, positive for decay.
    pub rate: Option<f64>,
    pub r2: Option<f64>,
    pub samples: usize,
}

/// Default quench threshold: `0.01 min(1, lambda_1)`.
pub fn default_quench_threshold(grid: &Grid) -> f64 {
    0.01 * grid.domain.lambda1().min(1.0)
}

/// Least-squares line through `log ||rho||^2` after entry into the small
/// regime. The rate is withheld unless the fit is long and straight enough.
pub fn fit_quench_rate(records: &[DiagnosticsRecord], eps: f64) -> QuenchFit {
    let Some(entry) = records.iter().position(|r| r.l2_rho * r.l2_rho < eps) else {
        return QuenchFit::default();
    };
    let pts: Vec<(f64, f64)> = records[entry..]
        .iter()
        .filter(|r| r.l2_rho > 0.0)
        .map(|r| (r.t, (r.l2_rho * r.l2_rho).ln()))
        .collect();
    let mut fit = QuenchFit { t_enter: Some(records[entry].t), samples: pts.len(), ..QuenchFit::default() };
    if let Some((slope, r2)) = line_fit(&pts) {
        fit.r2 = Some(r2);
        if pts.len() >= QUENCH_MIN_SAMPLES && r2 >= QUENCH_MIN_R2 {
            fit.rate = Some(-slope);
        }
    }
    fit
}

/// Slope and `r^2` of an ordinary least-squares line.
pub fn line_fit(pts: &[(f64, f64)]) -> Option<(f64, f64)> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Some((slope, r2))
}

/// Velocity functionals of one run in a buoyancy sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GScalingPoint {
    pub g: f64,
    /// `integral ||u||^2 dt` over the common window.
    pub u_l2_sq_integral: f64,
    /// `integral (||u||^2 + ||grad u||^2) dt` over the same window.
    pub u_h1_sq_integral: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GScalingReport {
    pub slope_l2: f64,
    pub slope_h1: f64,
    pub points_used: usize,
}

/// Log-log slopes against `g`. Points with `g = 0` or a vanishing functional
/// are left out.
pub fn g_scaling_report(points: &[GScalingPoint]) -> Result<GScalingReport> {
    let used: Vec<_> = points.iter().filter(|p| p.g > 0.0 && p.u_l2_sq_integral > 0.0 && p.u_h1_sq_integral > 0.0).collect();
    if used.len() < 4 {
        return Err(invalid(format!("g-scaling needs at least 4 usable points, got {}", used.len())));
    }
    let lo = used.iter().map(|p| p.g).fold(f64::INFINITY, f64::min);
    let hi = used.iter().map(|p| p.g).fold(0.0, f64::max);
    if hi / lo < 100.0 * (1.0 - 1e-12) {
        return Err(invalid(format!("g-scaling needs two decades, got [{lo}, {hi}]")));
    }
    let slope = |f: fn(&GScalingPoint) -> f64| {
        let pts: Vec<_> = used.iter().map(|p| (p.g.ln(), f(p).ln())).collect();
        line_fit(&pts).map(|s| s.0).unwrap_or(f64::NAN)
    };
    Ok(GScalingReport {
        slope_l2: slope(|p| p.u_l2_sq_integral),
        slope_h1: slope(|p| p.u_h1_sq_integral),
        points_used: used.len(),
    })
}

/// `prod_{j=1}^n (2^{j+2} - d) / (2^{j+2} - 2d)`, multiplied out term by term.
pub fn moser_partial_product(n: u32, d: u32) -> Result<f64> {
    if !(d == 2 || d == 3) {
        return Err(invalid(format!("dimension must be 2 or 3, got {d}")));
    }
    let d = f64::from(d);
    let mut p = 1.0;
    for j in 1..=n {
        let q = 2f64.powi(j as i32 + 2);
        p *= (q - d) / (q - 2.0 * d);
    }
    Ok(p)
}

/// `(4 - d 2^-n) / (4 - d)`.
pub fn moser_closed_form(n: u32, d: u32) -> f64 {
    let d = f64::from(d);
    (4.0 - d * 2f64.powi(-(n as i32))) / (4.0 - d)
}

pub fn write_csv<W: Write>(w: W, records: &[DiagnosticsRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in records {
        out.serialize(r).map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(r: R) -> Result<Vec<DiagnosticsRecord>> {
    csv::Reader::from_reader(r).deserialize().map(|r| r.map_err(csv_error)).collect()
}

fn csv_error(e: csv::Error) -> crate::Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    crate::Error::Parse { line, message: e.to_string() }
}
