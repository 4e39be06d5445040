//! Rectangle domain, uniform interior grid and grid fields with homogeneous
//! Dirichlet boundary values.
//!
//! Only interior nodes are stored. Node `(i, j)` (zero based) sits at
//! `((i + 1) hx, (j + 1) hy)` and lives at flat index `i * ny + j`, so a
//! field is an `nx x ny` row-major array with `y` varying fastest. Values on
//! the boundary are implicitly zero everywhere in this crate.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Axis-aligned rectangle `[0, lx] x [0, ly]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lx: f64,
    pub ly: f64,
}

impl Domain {
    pub fn new(lx: f64, ly: f64) -> Result<Self> {
        if !(lx.is_finite() && ly.is_finite() && lx > 0.0 && ly > 0.0) {
            return Err(invalid(format!("domain extents must be positive, got {lx} x {ly}")));
        }
        Ok(Self { lx, ly })
    }

    pub fn diameter(&self) -> f64 {
        self.lx.hypot(self.ly)
    }

    pub fn area(&self) -> f64 {
        self.lx * self.ly
    }

    /// Smallest Dirichlet-Laplacian eigenvalue `pi^2 (1/lx^2 + 1/ly^2)`.
    pub fn lambda1(&self) -> f64 {
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        pi2 * (1.0 / (self.lx * self.lx) + 1.0 / (self.ly * self.ly))
    }

    /// Poincare constant `1 / lambda1`.
    pub fn poincare_constant(&self) -> f64 {
        1.0 / self.lambda1()
    }
}

/// Uniform grid of `nx x ny` interior nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub domain: Domain,
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
}

/// Builds the grid for `[0, lx] x [0, ly]` with `nx x ny` interior nodes.
pub fn build_grid(lx: f64, ly: f64, nx: usize, ny: usize) -> Result<Grid> {
    let domain = Domain::new(lx, ly)?;
    Grid::new(domain, nx, ny)
}

impl Grid {
    pub fn new(domain: Domain, nx: usize, ny: usize) -> Result<Self> {
        if nx < 3 || ny < 3 {
            return Err(invalid(format!("grid needs at least 3 interior nodes per axis, got {nx} x {ny}")));
        }
        Ok(Self {
            domain,
            nx,
            ny,
            hx: domain.lx / (nx + 1) as f64,
            hy: domain.ly / (ny + 1) as f64,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.ny + j
    }

    #[inline]
    pub fn x(&self, i: usize) -> f64 {
        (i + 1) as f64 * self.hx
    }

    #[inline]
    pub fn y(&self, j: usize) -> f64 {
        (j + 1) as f64 * self.hy
    }

    /// Area weight of one node in the interior quadrature.
    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.hx * self.hy
    }

    pub fn min_spacing(&self) -> f64 {
        self.hx.min(self.hy)
    }

    /// Same extents and node counts (spacings follow).
    pub fn same_as(&self, other: &Grid) -> bool {
        self.nx == other.nx && self.ny == other.ny && self.domain == other.domain
    }
}

/// Boundary condition carried by a field. Only homogeneous Dirichlet exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BoundaryCondition {
    #[default]
    DirichletZero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
    bc: BoundaryCondition,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        Self { grid, values: vec![0.0; grid.len()], bc: BoundaryCondition::DirichletZero }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(invalid(format!(
                "field has {} values, grid {}x{} needs {}",
                values.len(),
                grid.nx,
                grid.ny,
                grid.len()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite field value at index {bad}")));
        }
        Ok(Self { grid, values, bc: BoundaryCondition::DirichletZero })
    }

    /// Wraps values without the finiteness scan. Used on hot paths where the
    /// caller checks finiteness itself.
    pub(crate) fn from_vec_unchecked(grid: Grid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values, bc: BoundaryCondition::DirichletZero }
    }

    /// Samples `f(x, y)` at the interior nodes.
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for i in 0..grid.nx {
            let x = grid.x(i);
            for j in 0..grid.ny {
                values.push(f(x, grid.y(j)));
            }
        }
        Self::from_vec_unchecked(grid, values)
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn bc(&self) -> BoundaryCondition {
        self.bc
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    /// Value at extended index `(i, j)` where `-1` and `n` address the walls.
    #[inline]
    pub fn at_ext(&self, i: isize, j: isize) -> f64 {
        if i < 0 || j < 0 || i >= self.grid.nx as isize || j >= self.grid.ny as isize {
            0.0
        } else {
            self.values[self.grid.idx(i as usize, j as usize)]
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn scale(&mut self, a: f64) {
        self.values.iter_mut().for_each(|v| *v *= a);
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &ScalarField) {
        debug_assert!(self.grid.same_as(&other.grid));
        for (s, o) in self.values.iter_mut().zip(&other.values) {
            *s += a * o;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_vec_unchecked(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert!(self.grid.same_as(&other.grid));
        Self::from_vec_unchecked(
            self.grid,
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    /// `L^2` inner product under the interior quadrature.
    pub fn dot(&self, other: &ScalarField) -> f64 {
        debug_assert!(self.grid.same_as(&other.grid));
        compensated_sum(self.values.iter().zip(&other.values).map(|(a, b)| a * b)) * self.grid.cell_area()
    }

    pub fn norm_l2(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs_diff(&self, other: &ScalarField) -> f64 {
        self.values.iter().zip(&other.values).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: Grid,
    pub ux: Vec<f64>,
    pub uy: Vec<f64>,
}

impl VectorField {
    pub fn zeros(grid: Grid) -> Self {
        Self { grid, ux: vec![0.0; grid.len()], uy: vec![0.0; grid.len()] }
    }

    pub fn from_components(x: ScalarField, y: ScalarField) -> Self {
        debug_assert!(x.grid.same_as(&y.grid));
        Self { grid: x.grid, ux: x.values, uy: y.values }
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn x_component(&self) -> ScalarField {
        ScalarField::from_vec_unchecked(self.grid, self.ux.clone())
    }

    pub fn y_component(&self) -> ScalarField {
        ScalarField::from_vec_unchecked(self.grid, self.uy.clone())
    }

    pub fn max_speed(&self) -> f64 {
        self.ux.iter().zip(&self.uy).fold(0.0_f64, |m, (a, b)| m.max(a.hypot(*b)))
    }

    pub fn is_finite(&self) -> bool {
        self.ux.iter().chain(&self.uy).all(|v| v.is_finite())
    }

    /// Centered discrete divergence, using zero for off-grid values.
    pub fn divergence(&self) -> ScalarField {
        let g = self.grid;
        let (nx, ny) = (g.nx, g.ny);
        let mut out = vec![0.0; g.len()];
        for i in 0..nx {
            for j in 0..ny {
                let e = if i + 1 < nx { self.ux[g.idx(i + 1, j)] } else { 0.0 };
                let w = if i > 0 { self.ux[g.idx(i - 1, j)] } else { 0.0 };
                let n = if j + 1 < ny { self.uy[g.idx(i, j + 1)] } else { 0.0 };
                let s = if j > 0 { self.uy[g.idx(i, j - 1)] } else { 0.0 };
                out[g.idx(i, j)] = (e - w) / (2.0 * g.hx) + (n - s) / (2.0 * g.hy);
            }
        }
        ScalarField::from_vec_unchecked(g, out)
    }
}

/// Discrete differential operators on Dirichlet fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operator {
    /// 5-point Laplacian.
    Laplacian,
    /// Centered `d/dx`.
    GradX,
    /// Centered `d/dy`.
    GradY,
}

pub fn apply_operator(f: &ScalarField, op: Operator) -> ScalarField {
    match op {
        Operator::Laplacian => laplacian(f),
        Operator::GradX => grad_x(f),
        Operator::GradY => grad_y(f),
    }
}

pub fn laplacian(f: &ScalarField) -> ScalarField {
    let g = *f.grid();
    let (nx, ny) = (g.nx, g.ny);
    let (ax, ay) = (1.0 / (g.hx * g.hx), 1.0 / (g.hy * g.hy));
    let v = f.values();
    let mut out = vec![0.0; g.len()];
    for i in 0..nx {
        for j in 0..ny {
            let k = g.idx(i, j);
            let c = v[k];
            let e = if i + 1 < nx { v[k + ny] } else { 0.0 };
            let w = if i > 0 { v[k - ny] } else { 0.0 };
            let n = if j + 1 < ny { v[k + 1] } else { 0.0 };
            let s = if j > 0 { v[k - 1] } else { 0.0 };
            out[k] = ax * (e - 2.0 * c + w) + ay * (n - 2.0 * c + s);
        }
    }
    ScalarField::from_vec_unchecked(g, out)
}

pub fn grad_x(f: &ScalarField) -> ScalarField {
    let g = *f.grid();
    let (nx, ny) = (g.nx, g.ny);
    let v = f.values();
    let mut out = vec![0.0; g.len()];
    let s = 0.5 / g.hx;
    for i in 0..nx {
        for j in 0..ny {
            let k = g.idx(i, j);
            let e = if i + 1 < nx { v[k + ny] } else { 0.0 };
            let w = if i > 0 { v[k - ny] } else { 0.0 };
            out[k] = s * (e - w);
        }
    }
    ScalarField::from_vec_unchecked(g, out)
}

pub fn grad_y(f: &ScalarField) -> ScalarField {
    let g = *f.grid();
    let ny = g.ny;
    let v = f.values();
    let mut out = vec![0.0; g.len()];
    let s = 0.5 / g.hy;
    for i in 0..g.nx {
        for j in 0..ny {
            let k = g.idx(i, j);
            let n = if j + 1 < ny { v[k + 1] } else { 0.0 };
            let so = if j > 0 { v[k - 1] } else { 0.0 };
            out[k] = s * (n - so);
        }
    }
    ScalarField::from_vec_unchecked(g, out)
}

pub fn gradient(f: &ScalarField) -> VectorField {
    VectorField::from_components(grad_x(f), grad_y(f))
}

/// `hx hy * sum(values)`: the trapezoid rule with zero boundary values.
pub fn integrate(f: &ScalarField) -> f64 {
    compensated_sum(f.values().iter().copied()) * f.grid().cell_area()
}

/// `sum |grad f|^2` over grid edges (walls included), which equals
/// `-(f, laplacian f)` exactly.
pub fn dirichlet_energy(f: &ScalarField) -> f64 {
    let g = *f.grid();
    let v = f.values();
    let mut acc = Kahan::default();
    for i in 0..=g.nx {
        for j in 0..g.ny {
            let a = if i > 0 { v[g.idx(i - 1, j)] } else { 0.0 };
            let b = if i < g.nx { v[g.idx(i, j)] } else { 0.0 };
            let d = (b - a) / g.hx;
            acc.add(d * d);
        }
    }
    for i in 0..g.nx {
        for j in 0..=g.ny {
            let a = if j > 0 { v[g.idx(i, j - 1)] } else { 0.0 };
            let b = if j < g.ny { v[g.idx(i, j)] } else { 0.0 };
            let d = (b - a) / g.hy;
            acc.add(d * d);
        }
    }
    acc.value() * g.cell_area()
}

/// `oint df/dn dS` with second-order one-sided normal derivatives at each
/// wall node. Corners carry zero weight.
pub fn boundary_flux(f: &ScalarField) -> f64 {
    let g = *f.grid();
    let (nx, ny) = (g.nx, g.ny);
    let mut acc = Kahan::default();
    // outward derivative at a wall with f = 0 on it: -(4 f1 - f2) / (2h)
    let one_sided = |f1: f64, f2: f64, h: f64| -(4.0 * f1 - f2) / (2.0 * h);
    for j in 0..ny {
        acc.add(g.hy * one_sided(f.at(0, j), f.at(1, j), g.hx));
        acc.add(g.hy * one_sided(f.at(nx - 1, j), f.at(nx - 2, j), g.hx));
    }
    for i in 0..nx {
        acc.add(g.hx * one_sided(f.at(i, 0), f.at(i, 1), g.hy));
        acc.add(g.hx * one_sided(f.at(i, ny - 1), f.at(i, ny - 2), g.hy));
    }
    acc.value()
}

/// Wall flux `oint weight * df/dn dS` using the first-order normal derivative
/// `-f_adjacent / h`, the one implied by summation by parts of the 5-point
/// Laplacian: `integrate(weight * laplacian f)` equals this sum whenever the
/// weight is affine.
pub fn stencil_wall_flux(f: &ScalarField, weight: impl Fn(f64, f64) -> f64) -> f64 {
    let g = *f.grid();
    let (nx, ny) = (g.nx, g.ny);
    let (lx, ly) = (g.domain.lx, g.domain.ly);
    let mut acc = Kahan::default();
    for j in 0..ny {
        let y = g.y(j);
        acc.add(-g.hy * weight(0.0, y) * f.at(0, j) / g.hx);
        acc.add(-g.hy * weight(lx, y) * f.at(nx - 1, j) / g.hx);
    }
    for i in 0..nx {
        let x = g.x(i);
        acc.add(-g.hx * weight(x, 0.0) * f.at(i, 0) / g.hy);
        acc.add(-g.hx * weight(x, ly) * f.at(i, ny - 1) / g.hy);
    }
    acc.value()
}

/// Neumaier-compensated summation.
#[derive(Debug, Default, Clone, Copy)]
pub struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn compensated_sum(it: impl IntoIterator<Item = f64>) -> f64 {
    let mut k = Kahan::default();
    it.into_iter().for_each(|x| k.add(x));
    k.value()
}

/// Writes `FIELD nx ny Lx Ly t name` followed by the values, one per line,
/// in shortest round-trip decimal form.
pub fn write_field_dump<W: Write>(mut w: W, f: &ScalarField, t: f64, name: &str) -> Result<()> {
    if name.is_empty() || name.contains(char::is_whitespace) {
        return Err(invalid(format!("field name {name:?} must be a single non-empty token")));
    }
    let g = f.grid();
    let mut buf = String::with_capacity(f.values().len() * 24 + 64);
    writeln!(buf, "FIELD {} {} {:?} {:?} {:?} {}", g.nx, g.ny, g.domain.lx, g.domain.ly, t, name)
        .expect("writing to a String");
    for v in f.values() {
        writeln!(buf, "{v:?}").expect("writing to a String");
    }
    w.write_all(buf.as_bytes())?;
    Ok(())
}

/// Reads a field dump, returning `(field, t, name)`.
pub fn read_field_dump<R: BufRead>(r: R) -> Result<(ScalarField, f64, String)> {
    let mut lines = r.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, message: "empty field dump".into() })?;
    let header = header?;
    let tok: Vec<&str> = header.split_whitespace().collect();
    if tok.len() != 7 || tok[0] != "FIELD" {
        return Err(Error::Parse { line: 1, message: format!("bad header {header:?}") });
    }
    let p = |s: &str, what: &str| -> Result<f64> {
        s.parse::<f64>().map_err(|e| Error::Parse { line: 1, message: format!("{what}: {e}") })
    };
    let pu = |s: &str, what: &str| -> Result<usize> {
        s.parse::<usize>().map_err(|e| Error::Parse { line: 1, message: format!("{what}: {e}") })
    };
    let grid = build_grid(p(tok[3], "Lx")?, p(tok[4], "Ly")?, pu(tok[1], "nx")?, pu(tok[2], "ny")?)?;
    let t = p(tok[5], "t")?;
    let name = tok[6].to_string();
    let mut values = Vec::with_capacity(grid.len());
    for (lineno, line) in lines {
        let line = line?;
        for s in line.split_whitespace() {
            let v = s
                .parse::<f64>()
                .map_err(|e| Error::Parse { line: lineno + 1, message: format!("{s:?}: {e}") })?;
            values.push(v);
        }
    }
    Ok((ScalarField::from_values(grid, values)?, t, name))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn grid_spacings() {
        let g = build_grid(PI, PI, 3, 3).unwrap();
        assert!((g.hx - PI / 4.0).abs() < 1e-15 && (g.hy - PI / 4.0).abs() < 1e-15);
        let g = build_grid(1.0, 2.0, 7, 15).unwrap();
        assert_eq!((g.hx, g.hy), (0.125, 0.125));
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(matches!(build_grid(0.0, 1.0, 8, 8), Err(Error::InvalidArgument(_))));
        assert!(matches!(build_grid(1.0, -1.0, 8, 8), Err(Error::InvalidArgument(_))));
        assert!(matches!(build_grid(1.0, 1.0, 2, 8), Err(Error::InvalidArgument(_))));
        assert!(build_grid(f64::NAN, 1.0, 8, 8).is_err());
    }

    #[test]
    fn zero_field_maps_to_zero() {
        let g = build_grid(1.0, 1.5, 9, 11).unwrap();
        let z = ScalarField::zeros(g);
        for op in [Operator::Laplacian, Operator::GradX, Operator::GradY] {
            assert_eq!(apply_operator(&z, op).max_abs(), 0.0);
        }
        assert_eq!(integrate(&z), 0.0);
        assert_eq!(boundary_flux(&z), 0.0);
    }

    #[test]
    fn unit_field_integral_is_exact() {
        let g = build_grid(1.0, 1.0, 99, 99).unwrap();
        let one = ScalarField::from_fn(g, |_, _| 1.0);
        assert!((integrate(&one) - 0.9801).abs() < 1e-13);
    }

    fn sin_sin(g: Grid) -> ScalarField {
        ScalarField::from_fn(g, |x, y| x.sin() * y.sin())
    }

    #[test]
    fn laplacian_converges_at_second_order() {
        // the 5-point stencil on sin x sin y has the closed-form symbol, so the
        // observed order over dyadic refinements is the honest check
        let errs: Vec<f64> = [31usize, 63, 127]
            .iter()
            .map(|&n| {
                let g = build_grid(PI, PI, n, n).unwrap();
                let f = sin_sin(g);
                let lap = laplacian(&f);
                lap.max_abs_diff(&f.scaled(-2.0))
            })
            .collect();
        for w in errs.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order >= 1.9, "observed order {order} from {errs:?}");
        }
        assert!(errs[2] < 2.0 * (PI / 128.0).powi(2));
    }

    #[test]
    fn grad_x_matches_analytic_derivative() {
        let mut errs = Vec::new();
        for n in [31usize, 63, 127] {
            let g = build_grid(PI, PI, n, n).unwrap();
            let f = ScalarField::from_fn(g, |x, y| x * (PI - x) * y * (PI - y));
            let exact = ScalarField::from_fn(g, |x, y| (PI - 2.0 * x) * y * (PI - y));
            errs.push(grad_x(&f).max_abs_diff(&exact));
        }
        // quadratic in x: centered differences are exact up to roundoff
        assert!(errs.iter().all(|e| *e < 1e-12), "{errs:?}");
        let g = build_grid(PI, PI, 63, 63).unwrap();
        let f = ScalarField::from_fn(g, |x, y| x.sin() * y * (PI - y));
        let exact = ScalarField::from_fn(g, |x, y| x.cos() * y * (PI - y));
        assert!(grad_x(&f).max_abs_diff(&exact) < 0.5 * g.hx * g.hx * 2.5);
    }

    #[test]
    fn integral_of_sin_sin_tends_to_four() {
        let errs: Vec<f64> = [31usize, 63, 127]
            .iter()
            .map(|&n| (integrate(&sin_sin(build_grid(PI, PI, n, n).unwrap())) - 4.0).abs())
            .collect();
        assert!((errs[0] / errs[1]).log2() > 1.9 && (errs[1] / errs[2]).log2() > 1.9, "{errs:?}");
    }

    #[test]
    fn flux_of_sin_sin_tends_to_minus_eight() {
        let errs: Vec<f64> = [31usize, 63, 127]
            .iter()
            .map(|&n| {
                let g = build_grid(PI, PI, n, n).unwrap();
                let f = sin_sin(g);
                let via_divergence = integrate(&laplacian(&f));
                let flux = boundary_flux(&f);
                assert!((via_divergence - flux).abs() < 10.0 * g.hx * g.hx);
                (flux + 8.0).abs()
            })
            .collect();
        assert!(errs[2] < 2.5e-3, "{errs:?}");
        assert!((errs[0] / errs[1]).log2() > 1.9, "{errs:?}");
    }

    #[test]
    fn nonnegative_field_has_nonpositive_flux() {
        let g = build_grid(2.0, 1.0, 40, 20).unwrap();
        let f = ScalarField::from_fn(g, |x, y| {
            let b = (-((x - 0.7).powi(2) + (y - 0.4).powi(2)) / 0.05).exp();
            b * (PI * x / 2.0).sin() * (PI * y).sin()
        });
        assert!(boundary_flux(&f) <= 1e-12);
    }

    #[test]
    fn dirichlet_energy_is_minus_f_laplacian_f() {
        let g = build_grid(1.3, 0.7, 17, 11).unwrap();
        let f = ScalarField::from_fn(g, |x, y| (3.0 * x).cos() * y * (0.7 - y) * x * (1.3 - x) + x * y);
        let lhs = dirichlet_energy(&f);
        let rhs = -f.dot(&laplacian(&f));
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn stencil_wall_flux_matches_weighted_laplacian() {
        let g = build_grid(1.0, 2.0, 20, 30).unwrap();
        let f = ScalarField::from_fn(g, |x, y| (x * (1.0 - x) * y * (2.0 - y)) * (1.0 + x * y));
        let w = |_x: f64, y: f64| y - 2.0;
        let weighted = integrate(&ScalarField::from_fn(g, w).zip_map(&laplacian(&f), |a, b| a * b));
        assert!((weighted - stencil_wall_flux(&f, w)).abs() < 1e-11);
    }

    #[test]
    fn field_dump_round_trips() {
        let g = build_grid(1.0, 2.0, 4, 5).unwrap();
        let f = ScalarField::from_fn(g, |x, y| (x * 1.1e-7).exp() / 3.0 + y * PI);
        let mut buf = Vec::new();
        write_field_dump(&mut buf, &f, 0.125, "rho").unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("FIELD 4 5 1.0 2.0 0.125 rho\n"));
        let (back, t, name) = read_field_dump(&buf[..]).unwrap();
        assert_eq!((t, name.as_str()), (0.125, "rho"));
        assert_eq!(back, f);
    }

    #[test]
    fn field_dump_rejects_short_payload() {
        let bad = "FIELD 3 3 1.0 1.0 0 rho\n1 2 3\n";
        assert!(read_field_dump(bad.as_bytes()).is_err());
    }
}
