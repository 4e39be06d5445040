//! Stokes-Boussinesq flow in vorticity / stream-function form.
//!
//! With `omega = laplacian psi` and `u = (-d_y psi, d_x psi)` the curl of the
//! forced Stokes equation reads `omega_t = laplacian omega + g d_x rho`.
//! No-slip walls are imposed with Thom's closure: the wall vorticity is
//! `2 psi_adjacent / h_n^2`. The closure is treated implicitly. Its wall values
//! are the unknowns of a small dense influence system, solved next to the
//! fast sine transforms that handle the interior.

mod eigen;

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{grad_x, grad_y, laplacian, Grid, Kahan, ScalarField, VectorField};
use crate::spectral::{discrete_symbols, dst_forward, dst_inverse};

pub use eigen::{
    clamped_operator_dense, stokes_eigenbasis, stokes_eigenbasis_dense, stokes_eigenbasis_krylov,
    velocity_inner, KrylovOptions, StokesEigenpair,
};

/// `g * d_x rho`: the curl of the buoyancy force `g rho e_y`.
pub fn buoyancy_curl(rho: &ScalarField, g: f64) -> ScalarField {
    if g == 0.0 {
        return ScalarField::zeros(*rho.grid());
    }
    grad_x(rho).scaled(g)
}

/// Node velocity `(-d_y psi, d_x psi)` by centered differences.
pub fn velocity_from_streamfunction(psi: &ScalarField) -> VectorField {
    VectorField::from_components(grad_y(psi).scaled(-1.0), grad_x(psi))
}

/// Normal velocities on the faces of the node control volumes, taken as the
/// curl of the stream function averaged to cell corners. Every control
/// volume sees zero net flux.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceVelocity {
    pub nx: usize,
    pub ny: usize,
    /// `(nx + 1) x ny`; entry `(i, j)` is the face between nodes `i - 1` and `i`.
    pub ux: Vec<f64>,
    /// `nx x (ny + 1)`; entry `(i, j)` is the face between nodes `j - 1` and `j`.
    pub uy: Vec<f64>,
}

impl FaceVelocity {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            nx: grid.nx,
            ny: grid.ny,
            ux: vec![0.0; (grid.nx + 1) * grid.ny],
            uy: vec![0.0; grid.nx * (grid.ny + 1)],
        }
    }

    #[inline]
    pub fn x_face(&self, i: usize, j: usize) -> f64 {
        self.ux[i * self.ny + j]
    }

    #[inline]
    pub fn y_face(&self, i: usize, j: usize) -> f64 {
        self.uy[i * (self.ny + 1) + j]
    }

    pub fn max_abs(&self) -> (f64, f64) {
        let m = |v: &[f64]| v.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        (m(&self.ux), m(&self.uy))
    }
}

pub fn face_velocity(psi: &ScalarField) -> FaceVelocity {
    let g = *psi.grid();
    let (nx, ny) = (g.nx, g.ny);
    // corner (a, b) sits between nodes a-1..a and b-1..b
    let cw = ny + 1;
    // wall corners keep psi = 0 so no face carries flow through a wall
    let mut corner = vec![0.0; (nx + 1) * cw];
    for a in 1..nx {
        for b in 1..ny {
            let (ia, jb) = (a as isize, b as isize);
            corner[a * cw + b] = 0.25
                * (psi.at_ext(ia - 1, jb - 1)
                    + psi.at_ext(ia, jb - 1)
                    + psi.at_ext(ia - 1, jb)
                    + psi.at_ext(ia, jb));
        }
    }
    let mut fv = FaceVelocity::zeros(&g);
    for a in 0..=nx {
        for j in 0..ny {
            fv.ux[a * ny + j] = -(corner[a * cw + j + 1] - corner[a * cw + j]) / g.hy;
        }
    }
    for i in 0..nx {
        for b in 0..=ny {
            fv.uy[i * (ny + 1) + b] = (corner[(i + 1) * cw + b] - corner[i * cw + b]) / g.hx;
        }
    }
    fv
}

/// Wall nodes carrying Thom vorticity, corners excluded. Order: left wall
/// (bottom to top), right wall, bottom wall (left to right), top wall.
#[derive(Debug, Clone)]
pub(crate) struct Walls {
    /// Adjacent interior node of each wall node.
    pub node: Vec<usize>,
    /// Normal spacing at each wall node.
    pub h: Vec<f64>,
}

impl Walls {
    pub fn new(g: &Grid) -> Self {
        let mut node = Vec::with_capacity(2 * (g.nx + g.ny));
        let mut h = Vec::with_capacity(node.capacity());
        for i in [0, g.nx - 1] {
            for j in 0..g.ny {
                node.push(g.idx(i, j));
                h.push(g.hx);
            }
        }
        for j in [0, g.ny - 1] {
            for i in 0..g.nx {
                node.push(g.idx(i, j));
                h.push(g.hy);
            }
        }
        Self { node, h }
    }

    pub fn len(&self) -> usize {
        self.node.len()
    }

    /// Thom wall vorticity from the stream function.
    pub fn thom(&self, psi: &[f64]) -> Vec<f64> {
        self.node.iter().zip(&self.h).map(|(&n, &h)| 2.0 * psi[n] / (h * h)).collect()
    }

    /// Adds the wall values' contribution to the 5-point Laplacian.
    pub fn scatter(&self, wall: &[f64], scale: f64, out: &mut [f64]) {
        for ((&n, &h), w) in self.node.iter().zip(&self.h).zip(wall) {
            out[n] += scale * w / (h * h);
        }
    }
}

/// Orthonormal 1D sine matrix `sqrt(2/(n+1)) sin(pi (i+1) k / (n+1))`.
fn sine_matrix(n: usize) -> Vec<f64> {
    let s = (2.0 / (n + 1) as f64).sqrt();
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            m[i * n + k] = s * (std::f64::consts::PI * ((i + 1) * (k + 1)) as f64 / (n + 1) as f64).sin();
        }
    }
    m
}

/// Dense factorized influence system `I + coef * R G E` for the wall
/// vorticity, where `G` is diagonal in the sine basis with entries `mu`.
struct Influence {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl Influence {
    fn build(grid: &Grid, walls: &Walls, coef: f64, mu: impl Fn(f64) -> f64) -> Result<Self> {
        let (nx, ny) = (grid.nx, grid.ny);
        let (lx, ly) = discrete_symbols(grid);
        let sx = sine_matrix(nx);
        let sy = sine_matrix(ny);
        let mut mu_t = DMatrix::<f64>::zeros(ny, nx); // [k2, k1]
        for k1 in 0..nx {
            for k2 in 0..ny {
                mu_t[(k2, k1)] = mu(lx[k1] + ly[k2]);
            }
        }
        let sxm = DMatrix::from_row_slice(nx, nx, &sx);
        let sym = DMatrix::from_row_slice(ny, ny, &sy);
        let nb = walls.len();
        let mut gw = DMatrix::<f64>::zeros(nb, nb);
        // wall segments: (offset, fixed index, runs along y?)
        let segs = [(0, 0usize, true), (ny, nx - 1, true), (2 * ny, 0, false), (2 * ny + nx, ny - 1, false)];
        for &(oa, fa, va) in &segs {
            for &(ob, fb, vb) in &segs {
                let block = match (va, vb) {
                    (true, true) => {
                        // sum over k1 folds into a diagonal in k2
                        let d = DVector::from_fn(ny, |k2, _| {
                            (0..nx).map(|k1| sx[fa * nx + k1] * sx[fb * nx + k1] * mu_t[(k2, k1)]).sum()
                        });
                        &sym * DMatrix::from_diagonal(&d) * sym.transpose()
                    }
                    (false, false) => {
                        let d = DVector::from_fn(nx, |k1, _| {
                            (0..ny).map(|k2| sy[fa * ny + k2] * sy[fb * ny + k2] * mu_t[(k2, k1)]).sum()
                        });
                        &sxm * DMatrix::from_diagonal(&d) * sxm.transpose()
                    }
                    (true, false) => {
                        // rows j along the vertical wall, columns i along the horizontal one
                        let p1 = DMatrix::from_fn(ny, ny, |j, k2| sy[j * ny + k2] * sy[fb * ny + k2]);
                        let p2 = DMatrix::from_fn(nx, nx, |k1, i| sx[fa * nx + k1] * sx[i * nx + k1]);
                        p1 * &mu_t * p2
                    }
                    (false, true) => {
                        let p1 = DMatrix::from_fn(nx, nx, |i, k1| sx[i * nx + k1] * sx[fb * nx + k1]);
                        let p2 = DMatrix::from_fn(ny, ny, |k2, j| sy[fa * ny + k2] * sy[j * ny + k2]);
                        p1 * mu_t.transpose() * p2
                    }
                };
                gw.view_mut((oa, ob), (block.nrows(), block.ncols())).copy_from(&block);
            }
        }
        let mut m = DMatrix::<f64>::identity(nb, nb);
        for a in 0..nb {
            let ra = 2.0 / (walls.h[a] * walls.h[a]);
            for b in 0..nb {
                m[(a, b)] += coef * ra * gw[(a, b)] / (walls.h[b] * walls.h[b]);
            }
        }
        let lu = m.lu();
        if !lu.is_invertible() {
            return Err(Error::Numerical("wall influence matrix is singular".into()));
        }
        Ok(Self { lu })
    }

    fn solve(&self, rhs: Vec<f64>) -> Vec<f64> {
        let b = DVector::from_vec(rhs);
        self.lu.solve(&b).expect("influence matrix checked invertible").data.into()
    }
}

/// Flow state: stream function, interior vorticity, its Thom wall values and
/// the node velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowState {
    pub psi: ScalarField,
    pub omega: ScalarField,
    pub wall_omega: Vec<f64>,
    pub u: VectorField,
    pub t: f64,
}

impl FlowState {
    pub fn at_rest(grid: Grid) -> Self {
        Self::from_streamfunction(ScalarField::zeros(grid), 0.0)
    }

    pub fn from_streamfunction(psi: ScalarField, t: f64) -> Self {
        let walls = Walls::new(psi.grid());
        let omega = laplacian(&psi);
        let wall_omega = walls.thom(psi.values());
        let u = velocity_from_streamfunction(&psi);
        Self { psi, omega, wall_omega, u, t }
    }

    pub fn grid(&self) -> &Grid {
        self.psi.grid()
    }

    /// `||u||^2` with velocities on grid edges; equals `-(psi, laplacian psi)`.
    pub fn kinetic_l2_sq(&self) -> f64 {
        crate::geometry::dirichlet_energy(&self.psi)
    }

    /// `||grad u||^2 = ||omega||^2`, trapezoidal with the wall vorticity at
    /// half weight.
    pub fn dissipation(&self) -> f64 {
        let g = self.grid();
        let mut acc = Kahan::default();
        self.omega.values().iter().for_each(|w| acc.add(w * w));
        self.wall_omega.iter().for_each(|w| acc.add(0.5 * w * w));
        acc.value() * g.cell_area()
    }
}

/// Energy bookkeeping of one implicit flow step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StepEnergy {
    /// `||u||^2` after the step.
    pub kinetic: f64,
    /// `||grad u||^2` after the step.
    pub dissipation: f64,
    /// `g * integral(rho u_y)` with the forcing density and the new velocity.
    pub work: f64,
    /// `(||u_new||^2 - ||u_old||^2) / (2 dt) + dissipation - work`.
    pub residual: f64,
}

/// Stepper for the vorticity equation. Holds factorized influence systems
/// keyed by the step size, so repeated steps with the same `dt` only cost a
/// handful of sine transforms and one dense back substitution.
pub struct FlowSolver {
    grid: Grid,
    walls: Walls,
    implicit: HashMap<u64, Influence>,
    steady: Option<Influence>,
}

impl std::fmt::Debug for FlowSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FlowSolver")
            .field("grid", &self.grid)
            .field("cached_steps", &self.implicit.len())
            .finish()
    }
}

impl FlowSolver {
    pub fn new(grid: Grid) -> Self {
        Self { grid, walls: Walls::new(&grid), implicit: HashMap::new(), steady: None }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    fn influence(&mut self, dt: f64) -> Result<&Influence> {
        let key = dt.to_bits();
        if !self.implicit.contains_key(&key) {
            let inf = Influence::build(&self.grid, &self.walls, dt, |l| 1.0 / (l * (1.0 + dt * l)))?;
            // a runaway dt ladder should not hoard memory
            if self.implicit.len() >= 16 {
                self.implicit.clear();
            }
            self.implicit.insert(key, inf);
        }
        Ok(&self.implicit[&key])
    }

    /// One backward-Euler step of `omega_t = laplacian omega + g d_x rho`
    /// with implicit Thom walls.
    pub fn step(&mut self, s: &FlowState, rho: &ScalarField, g: f64, dt: f64) -> Result<(FlowState, StepEnergy)> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid(format!("flow step needs dt > 0, got {dt}")));
        }
        if !s.grid().same_as(&self.grid) || !rho.grid().same_as(&self.grid) {
            return Err(invalid("flow state, density and solver grids differ"));
        }
        let grid = self.grid;
        let mut r = s.omega.clone();
        if g != 0.0 {
            r.axpy(dt * g, &grad_x(rho));
        }
        // G r = P H^{-1} r
        let mut rc = dst_forward(&r);
        rc.apply_symbol(|l| 1.0 / (l * (1.0 + dt * l)));
        let gr = dst_inverse(&rc);
        let rhs: Vec<f64> = self.walls.thom(gr.values()).into_iter().map(|v| -v).collect();
        let wall = self.influence(dt)?.solve(rhs);
        let mut src = r.into_values();
        self.walls.scatter(&wall, dt, &mut src);
        let mut c = dst_forward(&ScalarField::from_vec_unchecked(grid, src));
        c.apply_symbol(|l| 1.0 / (1.0 + dt * l));
        let omega = dst_inverse(&c);
        c.apply_symbol(|l| -1.0 / l);
        let psi = dst_inverse(&c);
        if !omega.is_finite() || !psi.is_finite() {
            return Err(Error::Numerical("non-finite flow state".into()));
        }
        let u = velocity_from_streamfunction(&psi);
        let next = FlowState { wall_omega: self.walls.thom(psi.values()), psi, omega, u, t: s.t + dt };
        let kinetic = next.kinetic_l2_sq();
        let dissipation = next.dissipation();
        let work = g * rho.dot(&grad_x(&next.psi));
        let residual = (kinetic - s.kinetic_l2_sq()) / (2.0 * dt) + dissipation - work;
        Ok((next, StepEnergy { kinetic, dissipation, work, residual }))
    }

    /// Solves the clamped biharmonic problem `(laplacian^2 + Thom) psi = f`:
    /// the steady Stokes stream function for the vorticity source `-f`.
    pub fn solve_clamped(&mut self, f: &ScalarField) -> Result<ScalarField> {
        if self.steady.is_none() {
            self.steady = Some(Influence::build(&self.grid, &self.walls, 1.0, |l| 1.0 / (l * l))?);
        }
        let inf = self.steady.as_ref().expect("just built");
        let mut c = dst_forward(f);
        c.apply_symbol(|l| 1.0 / (l * l));
        let p2f = dst_inverse(&c);
        let wall = inf.solve(self.walls.thom(p2f.values()));
        let mut src = f.values().to_vec();
        self.walls.scatter(&wall, -1.0, &mut src);
        let mut c = dst_forward(&ScalarField::from_vec_unchecked(self.grid, src));
        c.apply_symbol(|l| 1.0 / (l * l));
        Ok(dst_inverse(&c))
    }

    /// Steady flow driven by a frozen density.
    pub fn steady_state(&mut self, rho: &ScalarField, g: f64) -> Result<FlowState> {
        let f = grad_x(rho).scaled(-g);
        let psi = self.solve_clamped(&f)?;
        Ok(FlowState::from_streamfunction(psi, 0.0))
    }
}

/// Applies the clamped operator `laplacian^2 psi + Thom(psi)` directly. Used
/// as a residual oracle.
pub fn apply_clamped(psi: &ScalarField) -> ScalarField {
    let walls = Walls::new(psi.grid());
    let mut out = laplacian(&laplacian(psi)).into_values();
    walls.scatter(&walls.thom(psi.values()), 1.0, &mut out);
    ScalarField::from_vec_unchecked(*psi.grid(), out)
}

/// Single flow step with a fresh solver. Prefer [`FlowSolver`] for repeated
/// steps: building the influence system dominates a single step.
pub fn step_flow(s: &FlowState, rho: &ScalarField, g: f64, dt: f64) -> Result<FlowState> {
    FlowSolver::new(*s.grid()).step(s, rho, g, dt).map(|(next, _)| next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_grid;
    use std::f64::consts::PI;

    #[test]
    fn buoyancy_curl_cases() {
        let g = build_grid(PI, PI, 63, 63).unwrap();
        let ry = ScalarField::from_fn(g, |_, y| y.sin() * (1.0 + y));
        // a y-only profile is not zero on the x walls, so only the columns
        // off the wall ring are exactly zero
        let b = buoyancy_curl(&ry, 3.0);
        for i in 1..g.nx - 1 {
            for j in 0..g.ny {
                assert_eq!(b.at(i, j), 0.0);
            }
        }
        let rho = ScalarField::from_fn(g, |x, y| x.sin() * y.sin());
        assert_eq!(buoyancy_curl(&rho, 0.0).max_abs(), 0.0);
        let exact = ScalarField::from_fn(g, |x, y| 2.0 * x.cos() * y.sin());
        assert!(buoyancy_curl(&rho, 2.0).max_abs_diff(&exact) < 2.0 * g.hx * g.hx);
    }

    #[test]
    fn velocity_of_sin_sin() {
        let g = build_grid(PI, PI, 63, 63).unwrap();
        let psi = ScalarField::from_fn(g, |x, y| x.sin() * y.sin());
        let u = velocity_from_streamfunction(&psi);
        let ex = ScalarField::from_fn(g, |x, y| -x.sin() * y.cos());
        let ey = ScalarField::from_fn(g, |x, y| x.cos() * y.sin());
        assert!(u.x_component().max_abs_diff(&ex) < g.hx * g.hx);
        assert!(u.y_component().max_abs_diff(&ey) < g.hx * g.hx);
        assert!(u.divergence().max_abs() < 1e-12);
        assert_eq!(velocity_from_streamfunction(&ScalarField::zeros(g)).max_speed(), 0.0);
    }

    #[test]
    fn face_velocity_is_discretely_solenoidal() {
        let g = build_grid(1.0, 1.4, 13, 17).unwrap();
        let psi = ScalarField::from_fn(g, |x, y| (3.0 * x).sin() * (y * 2.0).cos() + x * y);
        let fv = face_velocity(&psi);
        for i in 0..g.nx {
            for j in 0..g.ny {
                let div = (fv.x_face(i + 1, j) - fv.x_face(i, j)) / g.hx + (fv.y_face(i, j + 1) - fv.y_face(i, j)) / g.hy;
                assert!(div.abs() < 1e-12, "{div}");
            }
        }
    }

    #[test]
    fn zero_forcing_keeps_rest() {
        let g = build_grid(1.0, 1.0, 16, 16).unwrap();
        let mut solver = FlowSolver::new(g);
        let mut s = FlowState::at_rest(g);
        let rho = ScalarField::from_fn(g, |x, y| x * y);
        for _ in 0..5 {
            s = solver.step(&s, &rho, 0.0, 1e-2).unwrap().0;
        }
        assert_eq!(s.psi.max_abs(), 0.0);
        assert_eq!(s.omega.max_abs(), 0.0);
        assert!((s.t - 0.05).abs() < 1e-15);
    }

    #[test]
    fn implicit_step_satisfies_the_discrete_system() {
        let g = build_grid(1.0, 1.3, 14, 18).unwrap();
        let mut solver = FlowSolver::new(g);
        let rho = ScalarField::from_fn(g, |x, y| (-(x - 0.4).powi(2) * 9.0 - (y - 0.7).powi(2) * 5.0).exp());
        let s0 = FlowState::from_streamfunction(ScalarField::from_fn(g, |x, y| (x * (1.0 - x) * y * (1.3 - y)).powi(2)), 0.0);
        let dt = 0.01;
        let gval = 7.0;
        let (s1, _) = solver.step(&s0, &rho, gval, dt).unwrap();
        // omega = laplacian psi
        assert!(laplacian(&s1.psi).max_abs_diff(&s1.omega) < 1e-10 * s1.omega.max_abs().max(1.0));
        // backward Euler with Thom walls, checked stencil by stencil
        let walls = Walls::new(&g);
        let wall = walls.thom(s1.psi.values());
        let mut lap = laplacian(&s1.omega).into_values();
        walls.scatter(&wall, 1.0, &mut lap);
        let src = buoyancy_curl(&rho, gval);
        let mut worst: f64 = 0.0;
        for k in 0..g.len() {
            let lhs = (s1.omega.values()[k] - s0.omega.values()[k]) / dt;
            let rhs = lap[k] + src.values()[k];
            worst = worst.max((lhs - rhs).abs() / (1.0 + rhs.abs()));
        }
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn backward_euler_energy_residual_is_nonpositive() {
        let g = build_grid(PI, PI, 20, 20).unwrap();
        let mut solver = FlowSolver::new(g);
        let rho = ScalarField::from_fn(g, |x, y| x.sin() * y.sin() * (1.0 + x));
        let mut s = FlowState::at_rest(g);
        for _ in 0..10 {
            let (n, e) = solver.step(&s, &rho, 5.0, 0.02).unwrap();
            assert!(e.residual <= 1e-10 * (1.0 + e.work.abs()), "{e:?}");
            s = n;
        }
    }

    #[test]
    fn clamped_solve_inverts_the_operator() {
        let g = build_grid(1.0, 2.0, 12, 20).unwrap();
        let mut solver = FlowSolver::new(g);
        let f = ScalarField::from_fn(g, |x, y| (5.0 * x).sin() + y * y - x * y);
        let psi = solver.solve_clamped(&f).unwrap();
        let back = apply_clamped(&psi);
        assert!(back.max_abs_diff(&f) < 1e-9 * f.max_abs(), "{}", back.max_abs_diff(&f));
    }

    #[test]
    fn free_step_decreases_kinetic_energy() {
        let g = build_grid(1.0, 1.0, 16, 16).unwrap();
        let mut solver = FlowSolver::new(g);
        let mut s = FlowState::from_streamfunction(ScalarField::from_fn(g, |x, y| (PI * x).sin() * (2.0 * PI * y).sin()), 0.0);
        let rho = ScalarField::zeros(g);
        let mut e = s.kinetic_l2_sq();
        for _ in 0..20 {
            s = solver.step(&s, &rho, 0.0, 5e-3).unwrap().0;
            let e1 = s.kinetic_l2_sq();
            assert!(e1 <= e);
            e = e1;
        }
    }

    #[test]
    fn rejects_bad_dt() {
        let g = build_grid(1.0, 1.0, 8, 8).unwrap();
        let s = FlowState::at_rest(g);
        assert!(step_flow(&s, &ScalarField::zeros(g), 1.0, 0.0).is_err());
    }
}
