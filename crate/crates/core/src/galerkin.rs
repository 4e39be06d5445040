//! Two-basis Galerkin truncation: density in the Dirichlet-Laplacian sine
//! basis, velocity in the Stokes eigenbasis, evolved as a modal ODE system.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chemotaxis::Physics;
use crate::error::{invalid, Error, Result};
use crate::geometry::{grad_x, Grid, ScalarField, VectorField};
use crate::spectral::{laplace_eigenbasis, LaplaceEigenpair};
use crate::stokes::{face_velocity, stokes_eigenbasis, velocity_from_streamfunction, velocity_inner, StokesEigenpair};

/// Modes beyond this magnitude abort an integration as blowing up.
pub const MODE_OVERFLOW: f64 = 1e10;

#[derive(Debug, Clone)]
pub struct GalerkinBasis {
    pub grid: Grid,
    pub laplace: Vec<LaplaceEigenpair>,
    pub stokes: Vec<StokesEigenpair>,
}

impl GalerkinBasis {
    pub fn new(grid: Grid, n: usize, m: usize) -> Result<Self> {
        Ok(Self { grid, laplace: laplace_eigenbasis(&grid, n)?, stokes: stokes_eigenbasis(&grid, m)? })
    }

    pub fn n(&self) -> usize {
        self.laplace.len()
    }

    pub fn m(&self) -> usize {
        self.stokes.len()
    }
}

/// Coefficient tensors of the modal system.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTensors {
    pub n: usize,
    pub m: usize,
    /// Advection `C[l][j][k] = (w_j . grad v_k, v_l)`, flattened.
    pub c: Vec<f64>,
    /// Chemotaxis `D[l][j][k] = (div(v_k grad (-laplacian)^-1 v_j), v_l)`.
    pub d: Vec<f64>,
    /// Buoyancy `B[k][l] = (v_k, (w_l)_y)`.
    pub b: Vec<f64>,
    pub lambda: Vec<f64>,
    pub eta: Vec<f64>,
}

impl CoefficientTensors {
    #[inline]
    pub fn c_at(&self, l: usize, j: usize, k: usize) -> f64 {
        self.c[(l * self.m + j) * self.n + k]
    }

    #[inline]
    pub fn d_at(&self, l: usize, j: usize, k: usize) -> f64 {
        self.d[(l * self.n + j) * self.n + k]
    }

    #[inline]
    pub fn b_at(&self, k: usize, l: usize) -> f64 {
        self.b[k * self.m + l]
    }

    /// `max |C_ljk + C_kjl|`.
    pub fn antisymmetry_defect(&self) -> f64 {
        let mut worst = 0.0_f64;
        for l in 0..self.n {
            for j in 0..self.m {
                for k in 0..self.n {
                    worst = worst.max((self.c_at(l, j, k) + self.c_at(k, j, l)).abs());
                }
            }
        }
        worst
    }

    /// `max |C_ljl|`.
    pub fn diagonal_defect(&self) -> f64 {
        let mut worst = 0.0_f64;
        for l in 0..self.n {
            for j in 0..self.m {
                worst = worst.max(self.c_at(l, j, l).abs());
            }
        }
        worst
    }
}

/// Skew-symmetric discrete advection `A v = div(U v)` with centered face
/// values; its matrix is exactly antisymmetric for any face field.
fn skew_advect(v: &ScalarField, fv: &crate::stokes::FaceVelocity) -> Vec<f64> {
    let g = *v.grid();
    let mut out = vec![0.0; g.len()];
    let (ax, ay) = (0.5 / g.hx, 0.5 / g.hy);
    for i in 0..g.nx {
        for j in 0..g.ny {
            let (ii, jj) = (i as isize, j as isize);
            out[g.idx(i, j)] = ax * (fv.x_face(i + 1, j) * v.at_ext(ii + 1, jj) - fv.x_face(i, j) * v.at_ext(ii - 1, jj))
                + ay * (fv.y_face(i, j + 1) * v.at_ext(ii, jj + 1) - fv.y_face(i, j) * v.at_ext(ii, jj - 1));
        }
    }
    out
}

/// `int_0^L sin(q pi x / L) dx`.
fn sine_integral(q: i64, len: f64) -> f64 {
    if q % 2 == 0 {
        0.0
    } else {
        2.0 * len / (q as f64 * std::f64::consts::PI)
    }
}

/// `int_0^L cos(m pi x / L) sin(r pi x / L) dx`.
fn cos_sin(m: i64, r: i64, len: f64) -> f64 {
    0.5 * (sine_integral(r + m, len) + sine_integral(r - m, len))
}

/// `int_0^L sin(p.) sin(q.) sin(r.)`.
fn sss(p: i64, q: i64, r: i64, len: f64) -> f64 {
    0.5 * (cos_sin(p - q, r, len) - cos_sin(p + q, r, len))
}

/// `int_0^L sin(p.) cos(q.) cos(r.)`.
fn scc(p: i64, q: i64, r: i64, len: f64) -> f64 {
    0.5 * (cos_sin(q - r, p, len) + cos_sin(q + r, p, len))
}

/// Closed form of `D[l][j][k] = -(1 / lambda_j) int v_k grad v_j . grad v_l`,
/// using `(-laplacian)^-1 v_j = v_j / lambda_j` and one integration by parts.
pub fn chemotaxis_tensor(grid: &Grid, modes: &[(usize, usize)]) -> Vec<f64> {
    let (lx, ly) = (grid.domain.lx, grid.domain.ly);
    let pi = std::f64::consts::PI;
    let s3 = (2.0 / (lx * ly).sqrt()).powi(3);
    let n = modes.len();
    let mut d = vec![0.0; n * n * n];
    for (l, &(al, bl)) in modes.iter().enumerate() {
        for (j, &(aj, bj)) in modes.iter().enumerate() {
            let lam_j = crate::spectral::lambda_continuous(lx, ly, aj, bj);
            for (k, &(ak, bk)) in modes.iter().enumerate() {
                let (al, bl, aj, bj, ak, bk) = (al as i64, bl as i64, aj as i64, bj as i64, ak as i64, bk as i64);
                let gx = (aj as f64 * pi / lx) * (al as f64 * pi / lx) * scc(ak, aj, al, lx) * sss(bk, bj, bl, ly);
                let gy = (bj as f64 * pi / ly) * (bl as f64 * pi / ly) * sss(ak, aj, al, lx) * scc(bk, bj, bl, ly);
                d[(l * n + j) * n + k] = -s3 * (gx + gy) / lam_j;
            }
        }
    }
    d
}

pub fn assemble_tensors(basis: &GalerkinBasis) -> CoefficientTensors {
    let g = basis.grid;
    let (n, m, len) = (basis.n(), basis.m(), g.len());
    let w = g.cell_area();
    let v = DMatrix::from_fn(len, n, |p, k| basis.laplace[k].v.values()[p]);
    // C[l][j][k] = w * sum_p v_l(p) (A_j v_k)(p), one matrix product per j
    let slabs: Vec<DMatrix<f64>> = basis
        .stokes
        .par_iter()
        .map(|sp| {
            let fv = face_velocity(&sp.psi);
            let mut av = DMatrix::<f64>::zeros(len, n);
            for (k, lp) in basis.laplace.iter().enumerate() {
                av.set_column(k, &nalgebra::DVector::from_vec(skew_advect(&lp.v, &fv)));
            }
            v.tr_mul(&av) * w
        })
        .collect();
    let mut c = vec![0.0; n * m * n];
    for (j, slab) in slabs.iter().enumerate() {
        for l in 0..n {
            for k in 0..n {
                c[(l * m + j) * n + k] = slab[(l, k)];
            }
        }
    }
    let mut dx = DMatrix::<f64>::zeros(len, m);
    for (l, sp) in basis.stokes.iter().enumerate() {
        dx.set_column(l, &nalgebra::DVector::from_vec(grad_x(&sp.psi).into_values()));
    }
    let bm = v.tr_mul(&dx) * w;
    let b = (0..n).flat_map(|k| (0..m).map(move |l| (k, l))).map(|(k, l)| bm[(k, l)]).collect();
    let modes: Vec<_> = basis.laplace.iter().map(|e| (e.k1, e.k2)).collect();
    CoefficientTensors {
        n,
        m,
        c,
        d: chemotaxis_tensor(&g, &modes),
        b,
        lambda: basis.laplace.iter().map(|e| e.lambda_continuous).collect(),
        eta: basis.stokes.iter().map(|e| e.eta).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GalerkinState {
    pub rho: Vec<f64>,
    pub u: Vec<f64>,
    pub t: f64,
}

impl GalerkinState {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self { rho: vec![0.0; n], u: vec![0.0; m], t: 0.0 }
    }

    pub fn rho_norm(&self) -> f64 {
        self.rho.iter().map(|r| r * r).sum::<f64>().sqrt()
    }

    fn is_sane(&self) -> bool {
        self.rho.iter().chain(&self.u).all(|v| v.is_finite() && v.abs() <= MODE_OVERFLOW)
    }
}

/// Modal time derivatives. The chemotactic term enters with the sign that
/// projecting the density equation produces: `d rho_l / dt` contains
/// `-D[l][j][k] rho_k rho_j`.
pub fn galerkin_rhs(s: &GalerkinState, t: &CoefficientTensors, g: f64, physics: Physics) -> (Vec<f64>, Vec<f64>) {
    let (n, m) = (t.n, t.m);
    let mut dr: Vec<f64> = (0..n).map(|l| -t.lambda[l] * s.rho[l]).collect();
    if physics.advection {
        for (l, d) in dr.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..m {
                let uj = s.u[j];
                if uj == 0.0 {
                    continue;
                }
                let row = &t.c[(l * m + j) * n..(l * m + j + 1) * n];
                acc += uj * row.iter().zip(&s.rho).map(|(c, r)| c * r).sum::<f64>();
            }
            *d -= acc;
        }
    }
    if physics.chemotaxis {
        for (l, d) in dr.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..n {
                let rj = s.rho[j];
                if rj == 0.0 {
                    continue;
                }
                let row = &t.d[(l * n + j) * n..(l * n + j + 1) * n];
                acc += rj * row.iter().zip(&s.rho).map(|(c, r)| c * r).sum::<f64>();
            }
            *d -= acc;
        }
    }
    let du = (0..m)
        .map(|l| {
            let force: f64 = if g != 0.0 { (0..n).map(|k| t.b_at(k, l) * s.rho[k]).sum() } else { 0.0 };
            -t.eta[l] * s.u[l] + g * force
        })
        .collect();
    (dr, du)
}

fn axpy_state(s: &GalerkinState, a: f64, d: &(Vec<f64>, Vec<f64>)) -> GalerkinState {
    GalerkinState {
        rho: s.rho.iter().zip(&d.0).map(|(x, y)| x + a * y).collect(),
        u: s.u.iter().zip(&d.1).map(|(x, y)| x + a * y).collect(),
        t: s.t,
    }
}

/// One classical RK4 step.
pub fn rk4_step(s: &GalerkinState, t: &CoefficientTensors, g: f64, dt: f64, physics: Physics) -> GalerkinState {
    let k1 = galerkin_rhs(s, t, g, physics);
    let k2 = galerkin_rhs(&axpy_state(s, 0.5 * dt, &k1), t, g, physics);
    let k3 = galerkin_rhs(&axpy_state(s, 0.5 * dt, &k2), t, g, physics);
    let k4 = galerkin_rhs(&axpy_state(s, dt, &k3), t, g, physics);
    let comb = |a: &[f64], i: usize, part: fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>| {
        a[i] + dt / 6.0 * (part(&k1)[i] + 2.0 * part(&k2)[i] + 2.0 * part(&k3)[i] + part(&k4)[i])
    };
    GalerkinState {
        rho: (0..s.rho.len()).map(|i| comb(&s.rho, i, |k| &k.0)).collect(),
        u: (0..s.u.len()).map(|i| comb(&s.u, i, |k| &k.1)).collect(),
        t: s.t + dt,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GalerkinTrajectory {
    /// Sampled states, the initial one first and the last valid one last.
    pub states: Vec<GalerkinState>,
    /// Set when a mode overflowed; the last sample is the last valid state.
    pub overflow_at: Option<f64>,
}

pub fn integrate_galerkin(
    s0: &GalerkinState,
    t: &CoefficientTensors,
    g: f64,
    t_end: f64,
    dt: f64,
    stride: usize,
    physics: Physics,
) -> Result<GalerkinTrajectory> {
    if !(dt > 0.0 && dt.is_finite()) || !(t_end >= s0.t) {
        return Err(invalid(format!("integration needs dt > 0 and t_end >= t0, got dt = {dt}, t_end = {t_end}")));
    }
    if s0.rho.len() != t.n || s0.u.len() != t.m {
        return Err(invalid("state and tensor dimensions differ"));
    }
    let stride = stride.max(1);
    let steps = ((t_end - s0.t) / dt - 1e-9).ceil().max(0.0) as usize;
    let mut states = vec![s0.clone()];
    let mut s = s0.clone();
    for step in 1..=steps {
        let h = if step == steps { t_end - s.t } else { dt };
        let next = rk4_step(&s, t, g, h, physics);
        if !next.is_sane() {
            if states.last().map(|l| l.t) != Some(s.t) {
                states.push(s.clone());
            }
            return Ok(GalerkinTrajectory { states, overflow_at: Some(next.t) });
        }
        s = next;
        if step % stride == 0 || step == steps {
            states.push(s.clone());
        }
    }
    Ok(GalerkinTrajectory { states, overflow_at: None })
}

/// `rho_l = (rho0, v_l)` and `u_j = (grad-perp psi0, w_j)`.
pub fn project_initial_data(rho0: &ScalarField, psi0: &ScalarField, basis: &GalerkinBasis) -> Result<GalerkinState> {
    if !rho0.grid().same_as(&basis.grid) || !psi0.grid().same_as(&basis.grid) {
        return Err(invalid("initial data must live on the basis grid"));
    }
    Ok(GalerkinState {
        rho: basis.laplace.iter().map(|e| rho0.dot(&e.v)).collect(),
        u: basis.stokes.iter().map(|e| velocity_inner(psi0, &e.psi)).collect(),
        t: 0.0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub rho: ScalarField,
    pub psi: ScalarField,
    pub u: VectorField,
}

pub fn reconstruct(s: &GalerkinState, basis: &GalerkinBasis) -> Result<Reconstruction> {
    if s.rho.len() != basis.n() || s.u.len() != basis.m() {
        return Err(invalid("state and basis dimensions differ"));
    }
    let mut rho = ScalarField::zeros(basis.grid);
    for (c, e) in s.rho.iter().zip(&basis.laplace) {
        rho.axpy(*c, &e.v);
    }
    let mut psi = ScalarField::zeros(basis.grid);
    for (c, e) in s.u.iter().zip(&basis.stokes) {
        psi.axpy(*c, &e.psi);
    }
    let u = velocity_from_streamfunction(&psi);
    Ok(Reconstruction { rho, psi, u })
}

const GALTEN_MAGIC: &str = "GALTEN";

/// Writes the text header `GALTEN n m nx ny Lx Ly` and then `C, D, B,
/// lambda, eta` as little-endian `f64`.
pub fn write_tensors<W: Write>(mut w: W, t: &CoefficientTensors, grid: &Grid) -> Result<()> {
    writeln!(w, "{GALTEN_MAGIC} {} {} {} {} {:?} {:?}", t.n, t.m, grid.nx, grid.ny, grid.domain.lx, grid.domain.ly)?;
    for arr in [&t.c, &t.d, &t.b, &t.lambda, &t.eta] {
        let mut buf = Vec::with_capacity(arr.len() * 8);
        for v in arr.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<(CoefficientTensors, Grid)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Parse { line: 1, message: "missing tensor header".into() })?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|e| Error::Parse { line: 1, message: e.to_string() })?;
    let tok: Vec<&str> = header.split_whitespace().collect();
    if tok.len() != 7 || tok[0] != GALTEN_MAGIC {
        return Err(Error::Parse { line: 1, message: format!("bad tensor header {header:?}") });
    }
    let bad = |what: &str| Error::Parse { line: 1, message: format!("bad {what} in tensor header") };
    let n: usize = tok[1].parse().map_err(|_| bad("n"))?;
    let m: usize = tok[2].parse().map_err(|_| bad("m"))?;
    let nx: usize = tok[3].parse().map_err(|_| bad("nx"))?;
    let ny: usize = tok[4].parse().map_err(|_| bad("ny"))?;
    let lx: f64 = tok[5].parse().map_err(|_| bad("Lx"))?;
    let ly: f64 = tok[6].parse().map_err(|_| bad("Ly"))?;
    let grid = crate::geometry::build_grid(lx, ly, nx, ny)?;
    let sizes = [n * m * n, n * n * n, n * m, n, m];
    let body = &bytes[nl + 1..];
    if body.len() != sizes.iter().sum::<usize>() * 8 {
        return Err(Error::Parse { line: 2, message: format!("tensor payload has {} bytes", body.len()) });
    }
    let mut arrays = Vec::with_capacity(5);
    let mut off = 0;
    for s in sizes {
        let arr: Vec<f64> = body[off..off + 8 * s]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        off += 8 * s;
        arrays.push(arr);
    }
    let mut it = arrays.into_iter();
    let mut next = || it.next().expect("five arrays");
    Ok((CoefficientTensors { n, m, c: next(), d: next(), b: next(), lambda: next(), eta: next() }, grid))
}
