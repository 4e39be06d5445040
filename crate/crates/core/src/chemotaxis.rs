//! Density transport: advection by the flow, diffusion and chemotactic drift
//! up the gradient of `c = (-laplacian)^-1 rho`, plus the coupled stepper.
//!
//! The explicit part is a finite-volume update with fluxes upwinded in the
//! combined drift `u + grad c`, so interior fluxes cancel pairwise and the
//! scheme stays nonnegative under the CFL limit. Diffusion is implicit.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{integrate, Grid, ScalarField};
use crate::spectral::{solve_helmholtz, solve_poisson};
use crate::stokes::{face_velocity, FaceVelocity, FlowSolver, FlowState, StepEnergy};

/// Switches for the physical terms of the density equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Physics {
    pub chemotaxis: bool,
    pub advection: bool,
}

impl Default for Physics {
    fn default() -> Self {
        Self { chemotaxis: true, advection: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityState {
    pub rho: ScalarField,
    /// Chemoattractant; zero when chemotaxis is switched off.
    pub c: ScalarField,
    pub t: f64,
}

impl DensityState {
    pub fn new(rho: ScalarField, physics: Physics, t: f64) -> Self {
        let c = attractant(&rho, physics);
        Self { rho, c, t }
    }
}

fn attractant(rho: &ScalarField, physics: Physics) -> ScalarField {
    if physics.chemotaxis {
        solve_poisson(rho)
    } else {
        ScalarField::zeros(*rho.grid())
    }
}

/// Face-normal fluxes on the node control volumes, laid out like
/// [`FaceVelocity`].
#[derive(Debug, Clone, PartialEq)]
pub struct FaceFlux {
    pub nx: usize,
    pub ny: usize,
    pub fx: Vec<f64>,
    pub fy: Vec<f64>,
}

impl FaceFlux {
    fn zeros(g: &Grid) -> Self {
        Self { nx: g.nx, ny: g.ny, fx: vec![0.0; (g.nx + 1) * g.ny], fy: vec![0.0; g.nx * (g.ny + 1)] }
    }

    #[inline]
    pub fn x_face(&self, i: usize, j: usize) -> f64 {
        self.fx[i * self.ny + j]
    }

    #[inline]
    pub fn y_face(&self, i: usize, j: usize) -> f64 {
        self.fy[i * (self.ny + 1) + j]
    }

    /// Finite-volume divergence at every node.
    pub fn divergence(&self, g: &Grid) -> ScalarField {
        let mut out = vec![0.0; g.len()];
        for i in 0..g.nx {
            for j in 0..g.ny {
                out[g.idx(i, j)] = (self.x_face(i + 1, j) - self.x_face(i, j)) / g.hx
                    + (self.y_face(i, j + 1) - self.y_face(i, j)) / g.hy;
            }
        }
        ScalarField::from_vec_unchecked(*g, out)
    }

    pub fn add(&self, other: &FaceFlux) -> FaceFlux {
        let sum = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + y).collect();
        FaceFlux { nx: self.nx, ny: self.ny, fx: sum(&self.fx, &other.fx), fy: sum(&self.fy, &other.fy) }
    }
}

/// Advective and chemotactic parts of the upwind flux. Both use the density
/// upwinded in the combined drift, so they add up to the total flux.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxParts {
    pub advective: FaceFlux,
    pub chemotactic: FaceFlux,
}

impl FluxParts {
    pub fn total(&self) -> FaceFlux {
        self.advective.add(&self.chemotactic)
    }
}

pub fn chemo_flux_parts(rho: &ScalarField, c: &ScalarField, u: &FaceVelocity) -> FluxParts {
    let g = *rho.grid();
    let (nx, ny) = (g.nx, g.ny);
    let mut adv = FaceFlux::zeros(&g);
    let mut chem = FaceFlux::zeros(&g);
    for a in 0..=nx {
        let (lo, hi) = (a as isize - 1, a as isize);
        for j in 0..ny {
            let jj = j as isize;
            let dc = (c.at_ext(hi, jj) - c.at_ext(lo, jj)) / g.hx;
            let ua = u.x_face(a, j);
            let up = if ua + dc > 0.0 { rho.at_ext(lo, jj) } else { rho.at_ext(hi, jj) };
            adv.fx[a * ny + j] = up * ua;
            chem.fx[a * ny + j] = up * dc;
        }
    }
    for i in 0..nx {
        let ii = i as isize;
        for b in 0..=ny {
            let (lo, hi) = (b as isize - 1, b as isize);
            let dc = (c.at_ext(ii, hi) - c.at_ext(ii, lo)) / g.hy;
            let ub = u.y_face(i, b);
            let up = if ub + dc > 0.0 { rho.at_ext(ii, lo) } else { rho.at_ext(ii, hi) };
            adv.fy[i * (ny + 1) + b] = up * ub;
            chem.fy[i * (ny + 1) + b] = up * dc;
        }
    }
    FluxParts { advective: adv, chemotactic: chem }
}

/// Total transport flux `rho_face (u + grad c)` on every control-volume face.
pub fn chemo_flux(rho: &ScalarField, c: &ScalarField, u: &FaceVelocity) -> FaceFlux {
    chemo_flux_parts(rho, c, u).total()
}

/// `max |a_x| + max |a_y|` over faces of the combined drift `u + grad c`.
pub fn transport_speed(c: &ScalarField, u: &FaceVelocity) -> f64 {
    let g = *c.grid();
    let (mut mx, mut my) = (0.0_f64, 0.0_f64);
    for a in 0..=g.nx {
        for j in 0..g.ny {
            let dc = (c.at_ext(a as isize, j as isize) - c.at_ext(a as isize - 1, j as isize)) / g.hx;
            mx = mx.max((u.x_face(a, j) + dc).abs());
        }
    }
    for i in 0..g.nx {
        for b in 0..=g.ny {
            let dc = (c.at_ext(i as isize, b as isize) - c.at_ext(i as isize, b as isize - 1)) / g.hy;
            my = my.max((u.y_face(i, b) + dc).abs());
        }
    }
    mx + my
}

/// Largest step allowed by `dt * speed <= cfl * min(hx, hy)`.
pub fn cfl_limit(c: &ScalarField, u: &FaceVelocity, cfl: f64) -> f64 {
    let speed = transport_speed(c, u);
    if speed > 0.0 {
        cfl * c.grid().min_spacing() / speed
    } else {
        f64::INFINITY
    }
}

/// One density step: explicit upwind transport, then implicit diffusion.
/// `u` is ignored when advection is off.
pub fn step_density(s: &DensityState, u: &FaceVelocity, dt: f64, cfl: f64, physics: Physics) -> Result<DensityState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid(format!("density step needs dt > 0, got {dt}")));
    }
    let g = *s.rho.grid();
    let still;
    let u = if physics.advection {
        u
    } else {
        still = FaceVelocity::zeros(&g);
        &still
    };
    let dt_max = cfl_limit(&s.c, u, cfl);
    if dt > dt_max * (1.0 + 1e-12) {
        return Err(Error::CflViolation { dt, dt_max });
    }
    let div = chemo_flux(&s.rho, &s.c, u).divergence(&g);
    let mut star = s.rho.clone();
    star.axpy(-dt, &div);
    let rho = solve_helmholtz(&star, dt)?;
    if !rho.is_finite() {
        return Err(Error::BlowupSuspected { t: s.t + dt, reason: "non-finite density".into() });
    }
    Ok(DensityState { c: attractant(&rho, physics), rho, t: s.t + dt })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledState {
    pub density: DensityState,
    pub flow: FlowState,
    pub t: f64,
}

impl CoupledState {
    pub fn new(rho: ScalarField, psi: ScalarField, physics: Physics) -> Result<Self> {
        if !rho.grid().same_as(psi.grid()) {
            return Err(invalid("density and stream function live on different grids"));
        }
        Ok(Self { density: DensityState::new(rho, physics, 0.0), flow: FlowState::from_streamfunction(psi, 0.0), t: 0.0 })
    }

    pub fn grid(&self) -> &Grid {
        self.density.rho.grid()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoupledOptions {
    pub physics: Physics,
    pub cfl: f64,
    /// Largest admissible `max rho` before the run is declared blowing up.
    pub ceiling: f64,
    /// Step-size halvings below the target before the run is declared
    /// blowing up.
    pub max_halvings: u32,
}

impl Default for CoupledOptions {
    fn default() -> Self {
        Self { physics: Physics::default(), cfl: 0.4, ceiling: 1e8, max_halvings: 30 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoupledStep {
    pub dt: f64,
    pub energy: StepEnergy,
    pub mass_before: f64,
    pub mass_after: f64,
}

/// Lie-split stepper: flow with the current density, then density with the
/// new velocity. Step sizes are `dt_target / 2^k` so that only a handful of
/// wall influence systems are ever factorized.
#[derive(Debug)]
pub struct CoupledSolver {
    flow: FlowSolver,
    pub options: CoupledOptions,
    level: u32,
}

impl CoupledSolver {
    pub fn new(grid: Grid, options: CoupledOptions) -> Self {
        Self { flow: FlowSolver::new(grid), options, level: 0 }
    }

    pub fn flow_solver(&mut self) -> &mut FlowSolver {
        &mut self.flow
    }

    pub fn step(&mut self, s: &CoupledState, g: f64, dt_target: f64) -> Result<(CoupledState, CoupledStep)> {
        if !(dt_target > 0.0 && dt_target.is_finite()) {
            return Err(invalid(format!("coupled step needs dt > 0, got {dt_target}")));
        }
        let opts = self.options;
        let grid = *s.grid();
        let h = grid.min_spacing();
        let faces_of = |flow: &FlowState| {
            if opts.physics.advection {
                face_velocity(&flow.psi)
            } else {
                FaceVelocity::zeros(&grid)
            }
        };
        let mut k = self.level.saturating_sub(1);
        let speed0 = transport_speed(&s.density.c, &faces_of(&s.flow));
        while k <= opts.max_halvings && dt_target / f64::from(1u32 << k.min(31)) * speed0 > opts.cfl * h {
            k += 1;
        }
        loop {
            if k > opts.max_halvings {
                return Err(Error::BlowupSuspected {
                    t: s.t,
                    reason: format!("time step collapsed below dt_target / 2^{}", opts.max_halvings),
                });
            }
            let dt = dt_target / 2f64.powi(k as i32);
            let (flow, energy) = self.flow.step(&s.flow, &s.density.rho, g, dt)?;
            let faces = faces_of(&flow);
            if dt * transport_speed(&s.density.c, &faces) > opts.cfl * h * (1.0 + 1e-12) {
                k += 1;
                continue;
            }
            let density = step_density(&s.density, &faces, dt, opts.cfl, opts.physics)?;
            let peak = density.rho.max();
            if peak > opts.ceiling {
                return Err(Error::BlowupSuspected { t: density.t, reason: format!("max density {peak:.3e} above ceiling") });
            }
            self.level = k;
            let mass_before = integrate(&s.density.rho);
            let mass_after = integrate(&density.rho);
            let t = density.t;
            return Ok((CoupledState { density, flow, t }, CoupledStep { dt, energy, mass_before, mass_after }));
        }
    }
}

/// Single coupled step with a fresh solver.
pub fn step_coupled(s: &CoupledState, g: f64, dt_target: f64, options: CoupledOptions) -> Result<(CoupledState, f64)> {
    CoupledSolver::new(*s.grid(), options).step(s, g, dt_target).map(|(n, info)| (n, info.dt))
}

/// `A exp(-|x - x0|^2 / sigma^2) sin(pi x / lx) sin(pi y / ly)`, with `A`
/// chosen so that the discrete integral equals `mass`.
pub fn gaussian_bump(grid: &Grid, mass: f64, x0: f64, y0: f64, sigma: f64) -> Result<ScalarField> {
    if !(mass >= 0.0 && mass.is_finite()) || !(sigma > 0.0 && sigma.is_finite()) {
        return Err(invalid(format!("bump needs mass >= 0 and sigma > 0, got {mass}, {sigma}")));
    }
    let (lx, ly) = (grid.domain.lx, grid.domain.ly);
    if !(0.0..=lx).contains(&x0) || !(0.0..=ly).contains(&y0) {
        return Err(invalid(format!("bump center ({x0}, {y0}) outside the domain")));
    }
    let pi = std::f64::consts::PI;
    let shape = ScalarField::from_fn(*grid, |x, y| {
        let r2 = (x - x0).powi(2) + (y - y0).powi(2);
        (-r2 / (sigma * sigma)).exp() * (pi * x / lx).sin() * (pi * y / ly).sin()
    });
    let total = integrate(&shape);
    if mass == 0.0 {
        return Ok(ScalarField::zeros(*grid));
    }
    if total <= 0.0 {
        return Err(invalid("bump vanishes on this grid"));
    }
    Ok(shape.scaled(mass / total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, stencil_wall_flux};
    use crate::spectral::sine_mode;
    use std::f64::consts::PI;

    #[test]
    fn zero_density_has_zero_flux() {
        let g = build_grid(1.0, 1.0, 10, 10).unwrap();
        let z = ScalarField::zeros(g);
        let psi = ScalarField::from_fn(g, |x, y| x * y);
        let f = chemo_flux(&z, &solve_poisson(&z), &face_velocity(&psi));
        assert!(f.fx.iter().chain(&f.fy).all(|v| *v == 0.0));
    }

    #[test]
    fn chemotactic_flux_points_at_a_spike() {
        let g = build_grid(1.0, 1.0, 21, 21).unwrap();
        let mut rho = ScalarField::from_fn(g, |_, _| 0.1);
        rho.values_mut()[g.idx(10, 10)] = 50.0;
        let c = solve_poisson(&rho);
        let f = chemo_flux(&rho, &c, &FaceVelocity::zeros(&g));
        // faces west/south of the spike carry positive flux, east/north negative
        assert!(f.x_face(10, 10) > 0.0 && f.x_face(11, 10) < 0.0);
        assert!(f.y_face(10, 10) > 0.0 && f.y_face(10, 11) < 0.0);
        assert!(f.x_face(5, 10) > 0.0 && f.x_face(16, 10) < 0.0);
    }

    #[test]
    fn advective_flux_telescopes() {
        let g = build_grid(PI, PI, 30, 30).unwrap();
        let rho = ScalarField::from_fn(g, |x, y| (x * y).sin().abs() + x * (PI - x) * y * (PI - y));
        let psi = ScalarField::from_fn(g, |x, y| x.sin() * y.sin());
        let u = face_velocity(&psi);
        let f = chemo_flux(&rho, &ScalarField::zeros(g), &u);
        let total = integrate(&f.divergence(&g));
        // only wall faces survive the sum
        let mut wall = 0.0;
        for j in 0..g.ny {
            wall += g.hy * (f.x_face(g.nx, j) - f.x_face(0, j));
        }
        for i in 0..g.nx {
            wall += g.hx * (f.y_face(i, g.ny) - f.y_face(i, 0));
        }
        assert!((total - wall).abs() < 1e-12);
    }

    #[test]
    fn heat_decay_of_first_mode() {
        let g = build_grid(PI, PI, 64, 64).unwrap();
        let rho0 = sine_mode(&g, 1, 1);
        let physics = Physics { chemotaxis: false, advection: false };
        let mut s = DensityState::new(rho0.clone(), physics, 0.0);
        let still = FaceVelocity::zeros(&g);
        for _ in 0..500 {
            s = step_density(&s, &still, 1e-3, 0.4, physics).unwrap();
        }
        let ratio = s.rho.norm_l2() / rho0.norm_l2();
        assert!((ratio / (-1.0f64).exp() - 1.0).abs() < 0.01, "{ratio}");
    }

    #[test]
    fn mass_and_positivity_under_transport() {
        let g = build_grid(PI, PI, 40, 40).unwrap();
        let rho0 = gaussian_bump(&g, 30.0, 1.2, 1.7, 0.4).unwrap();
        let psi = ScalarField::from_fn(g, |x, y| 3.0 * x.sin().powi(2) * y.sin().powi(2));
        let u = face_velocity(&psi);
        let physics = Physics::default();
        let mut s = DensityState::new(rho0, physics, 0.0);
        let mut m = integrate(&s.rho);
        for _ in 0..200 {
            let dt = 0.9 * cfl_limit(&s.c, &u, 0.4).min(1e-2);
            let next = step_density(&s, &u, dt, 0.4, physics).unwrap();
            let m1 = integrate(&next.rho);
            assert!(m1 - m <= 1e-12, "mass grew by {}", m1 - m);
            // with no outflow through wall faces the loss is exactly the
            // diffusive wall flux of the implicit stencil
            let predicted = dt * stencil_wall_flux(&next.rho, |_, _| 1.0);
            assert!((m1 - m - predicted).abs() <= 1e-12, "{} vs {predicted}", m1 - m);
            assert!(next.rho.min() >= -1e-12);
            s = next;
            m = m1;
        }
    }

    #[test]
    fn cfl_violation_is_reported() {
        let g = build_grid(1.0, 1.0, 20, 20).unwrap();
        let rho = gaussian_bump(&g, 5.0, 0.5, 0.5, 0.2).unwrap();
        let psi = ScalarField::from_fn(g, |x, y| 50.0 * (PI * x).sin() * (PI * y).sin());
        let s = DensityState::new(rho, Physics::default(), 0.0);
        let r = step_density(&s, &face_velocity(&psi), 1.0, 0.4, Physics::default());
        assert!(matches!(r, Err(Error::CflViolation { .. })));
    }

    #[test]
    fn zero_density_stays_zero_and_flow_decays() {
        let g = build_grid(PI, PI, 24, 24).unwrap();
        let psi = ScalarField::from_fn(g, |x, y| (x.sin() * y.sin()).powi(2));
        let mut s = CoupledState::new(ScalarField::zeros(g), psi, Physics::default()).unwrap();
        let mut solver = CoupledSolver::new(g, CoupledOptions::default());
        let e0 = s.flow.kinetic_l2_sq();
        for _ in 0..20 {
            s = solver.step(&s, 10.0, 1e-2).unwrap().0;
            assert_eq!(s.density.rho.max_abs(), 0.0);
        }
        assert!(s.flow.kinetic_l2_sq() < e0);
    }

    #[test]
    fn zero_g_leaves_flow_unforced() {
        let g = build_grid(PI, PI, 24, 24).unwrap();
        let rho = gaussian_bump(&g, 5.0, 1.5, 1.5, 0.5).unwrap();
        let mut s = CoupledState::new(rho, ScalarField::zeros(g), Physics::default()).unwrap();
        let mut solver = CoupledSolver::new(g, CoupledOptions::default());
        for _ in 0..10 {
            s = solver.step(&s, 0.0, 1e-2).unwrap().0;
        }
        assert_eq!(s.flow.psi.max_abs(), 0.0);
    }

    #[test]
    fn gaussian_bump_has_requested_mass() {
        let g = build_grid(PI, PI, 50, 50).unwrap();
        let r = gaussian_bump(&g, 7.5, 1.0, 2.0, 0.3).unwrap();
        assert!((integrate(&r) - 7.5).abs() < 1e-12);
        assert!(r.min() >= 0.0);
        assert!(gaussian_bump(&g, 1.0, 1.0, 1.0, 0.0).is_err());
    }
}
