//! Sine-transform diagonalization of the 5-point Dirichlet Laplacian.
//!
//! The transform is normalized against the sampled eigenfunctions
//! `v_k = 2 / sqrt(lx ly) * sin(k1 pi x / lx) * sin(k2 pi y / ly)`, which are
//! exactly orthonormal under the interior quadrature `hx hy sum`. Forward
//! coefficients are therefore `(f, v_k)` and Parseval holds exactly.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{invalid, Result};
use crate::geometry::{Grid, ScalarField};

/// Coefficients of a grid field in the discrete sine basis. Mode `(k1, k2)`
/// (both from 1) sits at `(k1 - 1) * ny + (k2 - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCoeffs {
    grid: Grid,
    coeffs: Vec<f64>,
}

impl SpectralCoeffs {
    pub fn zeros(grid: Grid) -> Self {
        Self { grid, coeffs: vec![0.0; grid.len()] }
    }

    pub fn from_vec(grid: Grid, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != grid.len() {
            return Err(invalid(format!("expected {} coefficients, got {}", grid.len(), coeffs.len())));
        }
        Ok(Self { grid, coeffs })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn get(&self, k1: usize, k2: usize) -> f64 {
        self.coeffs[(k1 - 1) * self.grid.ny + (k2 - 1)]
    }

    /// Multiplies each coefficient by `f(lambda_discrete(k1, k2))`.
    pub fn apply_symbol(&mut self, f: impl Fn(f64) -> f64) {
        let (lx, ly) = discrete_symbols(&self.grid);
        let ny = self.grid.ny;
        for (a, lxa) in lx.iter().enumerate() {
            for (b, lyb) in ly.iter().enumerate() {
                self.coeffs[a * ny + b] *= f(lxa + lyb);
            }
        }
    }
}

/// One-dimensional symbols `(2 - 2 cos(k pi / (n + 1))) / h^2` for `k = 1..=n`
/// along each axis. The 2D discrete eigenvalue is their sum.
pub fn discrete_symbols(grid: &Grid) -> (Vec<f64>, Vec<f64>) {
    let axis = |n: usize, h: f64| -> Vec<f64> {
        (1..=n)
            .map(|k| {
                let s = (k as f64 * PI / (2.0 * (n + 1) as f64)).sin();
                4.0 * s * s / (h * h)
            })
            .collect()
    };
    (axis(grid.nx, grid.hx), axis(grid.ny, grid.hy))
}

pub fn lambda_discrete(grid: &Grid, k1: usize, k2: usize) -> f64 {
    let s1 = (k1 as f64 * PI / (2.0 * (grid.nx + 1) as f64)).sin();
    let s2 = (k2 as f64 * PI / (2.0 * (grid.ny + 1) as f64)).sin();
    4.0 * s1 * s1 / (grid.hx * grid.hx) + 4.0 * s2 * s2 / (grid.hy * grid.hy)
}

pub fn lambda_continuous(lx: f64, ly: f64, k1: usize, k2: usize) -> f64 {
    let (a, b) = (k1 as f64 / lx, k2 as f64 / ly);
    PI * PI * (a * a + b * b)
}

thread_local! {
    static PLANS: RefCell<HashMap<usize, Arc<dyn Fft<f64>>>> = RefCell::new(HashMap::new());
}

fn plan(len: usize) -> Arc<dyn Fft<f64>> {
    PLANS.with(|p| {
        p.borrow_mut()
            .entry(len)
            .or_insert_with(|| FftPlanner::new().plan_fft_forward(len))
            .clone()
    })
}

/// Unnormalized DST-I `S_k = sum_j f_j sin(pi j k / (n + 1))` of every
/// contiguous chunk of length `n`, two real chunks per complex FFT.
fn dst1_rows(data: &mut [f64], n: usize) {
    let m = 2 * (n + 1);
    let fft = plan(m);
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let rows = data.len() / n;
    let mut r = 0;
    while r < rows {
        let paired = r + 1 < rows;
        buf[0] = Complex64::new(0.0, 0.0);
        buf[n + 1] = Complex64::new(0.0, 0.0);
        for j in 1..=n {
            let a = data[r * n + j - 1];
            let b = if paired { data[(r + 1) * n + j - 1] } else { 0.0 };
            let z = Complex64::new(a, b);
            buf[j] = z;
            buf[m - j] = -z;
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        // the odd extension of a real row transforms to -2i S
        for k in 1..=n {
            data[r * n + k - 1] = -0.5 * buf[k].im;
            if paired {
                data[(r + 1) * n + k - 1] = 0.5 * buf[k].re;
            }
        }
        r += 2;
    }
}

fn transpose(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = src[i * cols + j];
        }
    }
    out
}

/// Unnormalized 2D DST-I of an `nx x ny` row-major array.
fn dst2(values: &[f64], nx: usize, ny: usize) -> Vec<f64> {
    let mut a = values.to_vec();
    dst1_rows(&mut a, ny);
    let mut t = transpose(&a, nx, ny);
    dst1_rows(&mut t, nx);
    transpose(&t, ny, nx)
}

fn basis_scale(grid: &Grid) -> f64 {
    2.0 / (grid.domain.lx * grid.domain.ly).sqrt()
}

pub fn dst_forward(f: &ScalarField) -> SpectralCoeffs {
    let g = *f.grid();
    let mut c = dst2(f.values(), g.nx, g.ny);
    let s = basis_scale(&g) * g.cell_area();
    c.iter_mut().for_each(|v| *v *= s);
    SpectralCoeffs { grid: g, coeffs: c }
}

pub fn dst_inverse(c: &SpectralCoeffs) -> ScalarField {
    let g = c.grid;
    let mut v = dst2(&c.coeffs, g.nx, g.ny);
    let s = basis_scale(&g);
    v.iter_mut().for_each(|x| *x *= s);
    ScalarField::from_vec_unchecked(g, v)
}

/// Solves `-laplacian_h c = f` with zero boundary values.
pub fn solve_poisson(f: &ScalarField) -> ScalarField {
    let mut c = dst_forward(f);
    c.apply_symbol(|l| 1.0 / l);
    dst_inverse(&c)
}

/// Solves `(I - a laplacian_h) w = f`.
pub fn solve_helmholtz(f: &ScalarField, a: f64) -> Result<ScalarField> {
    if !(a >= 0.0 && a.is_finite()) {
        return Err(invalid(format!("helmholtz coefficient must be finite and >= 0, got {a}")));
    }
    if a == 0.0 {
        return Ok(f.clone());
    }
    let mut c = dst_forward(f);
    c.apply_symbol(|l| 1.0 / (1.0 + a * l));
    Ok(dst_inverse(&c))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceEigenpair {
    pub k1: usize,
    pub k2: usize,
    pub lambda_continuous: f64,
    pub lambda_discrete: f64,
    pub v: ScalarField,
}

/// Sampled `L^2`-normalized sine product for mode `(k1, k2)`.
pub fn sine_mode(grid: &Grid, k1: usize, k2: usize) -> ScalarField {
    let (lx, ly) = (grid.domain.lx, grid.domain.ly);
    let s = basis_scale(grid);
    ScalarField::from_fn(*grid, |x, y| {
        s * (k1 as f64 * PI * x / lx).sin() * (k2 as f64 * PI * y / ly).sin()
    })
}

/// Mode indices of the first `n` Laplacian eigenpairs: ascending continuous
/// eigenvalue, ties broken lexicographically on `(k1, k2)`.
pub fn ordered_modes(grid: &Grid, n: usize) -> Result<Vec<(usize, usize)>> {
    if n > grid.len() {
        return Err(invalid(format!("requested {n} modes but the grid only resolves {}", grid.len())));
    }
    let (lx, ly) = (grid.domain.lx, grid.domain.ly);
    let lam_ref = lambda_continuous(lx, ly, 1, 1);
    // quantized so that analytically equal eigenvalues compare equal
    let key = |k1: usize, k2: usize| -> u64 {
        (lambda_continuous(lx, ly, k1, k2) / lam_ref * (1u64 << 36) as f64).round() as u64
    };
    let mut modes: Vec<(u64, usize, usize)> = Vec::new();
    for k1 in 1..=grid.nx {
        for k2 in 1..=grid.ny {
            modes.push((key(k1, k2), k1, k2));
        }
    }
    modes.sort_unstable();
    Ok(modes.into_iter().take(n).map(|(_, a, b)| (a, b)).collect())
}

pub fn laplace_eigenbasis(grid: &Grid, n: usize) -> Result<Vec<LaplaceEigenpair>> {
    let modes = ordered_modes(grid, n)?;
    Ok(modes
        .into_iter()
        .map(|(k1, k2)| LaplaceEigenpair {
            k1,
            k2,
            lambda_continuous: lambda_continuous(grid.domain.lx, grid.domain.ly, k1, k2),
            lambda_discrete: lambda_discrete(grid, k1, k2),
            v: sine_mode(grid, k1, k2),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_grid, laplacian};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(g: Grid, seed: u64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        ScalarField::from_values(g, v).unwrap()
    }

    /// Direct O(N^2) sine sum as an independent transform oracle.
    fn naive_forward(f: &ScalarField) -> Vec<f64> {
        let g = *f.grid();
        let mut out = vec![0.0; g.len()];
        for k1 in 1..=g.nx {
            for k2 in 1..=g.ny {
                let v = sine_mode(&g, k1, k2);
                out[(k1 - 1) * g.ny + k2 - 1] = f.dot(&v);
            }
        }
        out
    }

    #[test]
    fn matches_naive_sine_sum() {
        for (nx, ny) in [(5, 7), (6, 6), (9, 4)] {
            let g = build_grid(1.3, 0.8, nx, ny).unwrap();
            let f = random_field(g, 3);
            let fast = dst_forward(&f);
            let slow = naive_forward(&f);
            for (a, b) in fast.coeffs().iter().zip(&slow) {
                assert!((a - b).abs() < 1e-13, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn single_mode_has_single_coefficient() {
        let g = build_grid(PI, PI, 31, 31).unwrap();
        let c = dst_forward(&sine_mode(&g, 1, 1));
        assert!((c.get(1, 1) - 1.0).abs() < 1e-13);
        let off = c.coeffs().iter().skip(1).fold(0.0_f64, |m, v| m.max(v.abs()));
        assert!(off < 1e-13);
    }

    #[test]
    fn round_trip_and_parseval() {
        let g = build_grid(2.0, 1.0, 40, 23).unwrap();
        let f = random_field(g, 11);
        let c = dst_forward(&f);
        let back = dst_inverse(&c);
        let rel = back.max_abs_diff(&f) / f.max_abs();
        assert!(rel <= 1e-12, "{rel}");
        let energy: f64 = c.coeffs().iter().map(|v| v * v).sum();
        assert!((energy - f.dot(&f)).abs() <= 1e-10);
    }

    #[test]
    fn poisson_residual_and_eigen_case() {
        let g = build_grid(PI, PI, 63, 63).unwrap();
        let f = ScalarField::from_fn(g, |x, y| x.sin() * y.sin());
        let c = solve_poisson(&f);
        let expect = f.scaled(1.0 / lambda_discrete(&g, 1, 1));
        assert!(c.max_abs_diff(&expect) < 1e-13);
        let res = laplacian(&c).zip_map(&f, |a, b| -a - b).max_abs();
        assert!(res <= 1e-11, "{res}");
        assert_eq!(solve_poisson(&ScalarField::zeros(g)).max_abs(), 0.0);
    }

    #[test]
    fn poisson_is_positive_on_nonnegative_data() {
        let g = build_grid(1.0, 1.0, 30, 30).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut v = vec![0.0; g.len()];
        for _ in 0..3 {
            v[rng.random_range(0..g.len())] = rng.random_range(0.1..2.0);
        }
        let c = solve_poisson(&ScalarField::from_values(g, v).unwrap());
        assert!(c.min() > 0.0);
    }

    #[test]
    fn helmholtz_cases() {
        let g = build_grid(PI, PI, 40, 40).unwrap();
        let f = random_field(g, 9);
        assert_eq!(solve_helmholtz(&f, 0.0).unwrap(), f);
        let v = sine_mode(&g, 1, 1);
        let w = solve_helmholtz(&v, 1.0).unwrap();
        assert!(w.max_abs_diff(&v.scaled(1.0 / (1.0 + lambda_discrete(&g, 1, 1)))) < 1e-13);
        let a = 0.37;
        let w = solve_helmholtz(&f, a).unwrap();
        let applied = w.zip_map(&laplacian(&w), |x, l| x - a * l);
        assert!(applied.max_abs_diff(&f) <= 1e-11);
        assert!(solve_helmholtz(&f, -1.0).is_err());
    }

    #[test]
    fn eigenbasis_order_and_normalization() {
        let g = build_grid(PI, PI, 32, 32).unwrap();
        let b = laplace_eigenbasis(&g, 3).unwrap();
        let ks: Vec<_> = b.iter().map(|e| (e.k1, e.k2)).collect();
        assert_eq!(ks, vec![(1, 1), (1, 2), (2, 1)]);
        let lam: Vec<_> = b.iter().map(|e| e.lambda_continuous).collect();
        for (a, e) in lam.iter().zip([2.0, 5.0, 5.0]) {
            assert!((a - e).abs() < 1e-12);
        }
        let first = &b[0].v;
        let analytic = ScalarField::from_fn(g, |x, y| 2.0 / PI * x.sin() * y.sin());
        assert!(first.max_abs_diff(&analytic) < 1e-14);
        assert!(laplace_eigenbasis(&g, 32 * 32 + 1).is_err());
    }

    #[test]
    fn eigenbasis_gram_is_identity() {
        let g = build_grid(1.0, 1.7, 33, 41).unwrap();
        let b = laplace_eigenbasis(&g, 10).unwrap();
        for (i, p) in b.iter().enumerate() {
            for (j, q) in b.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((p.v.dot(&q.v) - expect).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn discrete_eigenvalue_tends_to_continuous() {
        let errs: Vec<f64> = [15usize, 31, 63]
            .iter()
            .map(|&n| (lambda_discrete(&build_grid(PI, PI, n, n).unwrap(), 2, 3) - 13.0).abs())
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2] && errs[2] < 0.05);
    }
}
