//! Stokes eigenpairs through the stream function.
//!
//! Free decay of the discrete flow is `B psi_t = -K psi` with `B = -laplacian`
//! and `K = laplacian^2 + Thom`, both symmetric and positive definite. The
//! Stokes eigenpairs are the generalized pairs `K psi = eta B psi`, and the
//! velocity inner product of two stream functions is `(psi_a, B psi_b)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{velocity_from_streamfunction, FlowSolver, Walls};
use crate::error::{invalid, Error, Result};
use crate::geometry::{laplacian, Grid, ScalarField, VectorField};

/// Grids up to this many nodes use the dense generalized eigensolver.
pub const DENSE_NODE_LIMIT: usize = 576;
/// Largest number of Stokes modes served.
pub const MAX_MODES: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct StokesEigenpair {
    pub eta: f64,
    /// Stream function with `(psi, -laplacian psi) = 1`.
    pub psi: ScalarField,
    /// Node velocity of `psi`.
    pub w: VectorField,
}

fn b_apply(x: &[f64], grid: &Grid) -> Vec<f64> {
    let mut v = laplacian(&ScalarField::from_vec_unchecked(*grid, x.to_vec())).into_values();
    v.iter_mut().for_each(|a| *a = -*a);
    v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dense `K` and `B` (grid-vector form, no area weight).
pub fn clamped_operator_dense(grid: &Grid) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = grid.len();
    let mut b = DMatrix::<f64>::zeros(n, n);
    let mut e = vec![0.0; n];
    for k in 0..n {
        e[k] = 1.0;
        let col = b_apply(&e, grid);
        b.set_column(k, &DVector::from_vec(col));
        e[k] = 0.0;
    }
    let mut kmat = &b * &b;
    let walls = Walls::new(grid);
    for (&node, &h) in walls.node.iter().zip(&walls.h) {
        kmat[(node, node)] += 2.0 / (h * h * h * h);
    }
    (kmat, b)
}

fn check_request(grid: &Grid, m: usize) -> Result<()> {
    if m == 0 || m > grid.len() || m > MAX_MODES {
        return Err(invalid(format!(
            "requested {m} Stokes modes; allowed 1..={} on a {}x{} grid",
            MAX_MODES.min(grid.len()),
            grid.nx,
            grid.ny
        )));
    }
    Ok(())
}

/// First `m` Stokes eigenpairs, ascending `eta`. Small grids go through the
/// dense solver, larger ones through the Krylov solver.
pub fn stokes_eigenbasis(grid: &Grid, m: usize) -> Result<Vec<StokesEigenpair>> {
    if grid.len() <= DENSE_NODE_LIMIT {
        stokes_eigenbasis_dense(grid, m)
    } else {
        stokes_eigenbasis_krylov(grid, m, &KrylovOptions::default())
    }
}

pub fn stokes_eigenbasis_dense(grid: &Grid, m: usize) -> Result<Vec<StokesEigenpair>> {
    check_request(grid, m)?;
    let (k, b) = clamped_operator_dense(grid);
    let chol = b.clone().cholesky().ok_or_else(|| Error::Numerical("-laplacian is not positive definite".into()))?;
    let l = chol.l();
    // C = L^-1 K L^-T
    let linv_k = l
        .solve_lower_triangular(&k)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let c = l
        .solve_lower_triangular(&linv_k.transpose())
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &bb| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[bb]));
    let take = (m + 4).min(order.len());
    let lt = l.transpose();
    let mut pairs = Vec::with_capacity(take);
    for &i in order.iter().take(take) {
        let y = eig.eigenvectors.column(i).into_owned();
        let psi = lt
            .solve_upper_triangular(&y)
            .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
        pairs.push((eig.eigenvalues[i], psi.data.into()));
    }
    finish(grid, pairs, m)
}

#[derive(Debug, Clone)]
pub struct KrylovOptions {
    pub block: usize,
    pub seed: u64,
    /// Relative residual `||A y - theta y||_B / theta` for convergence.
    pub tol: f64,
    pub max_restarts: usize,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        Self { block: 8, seed: 0x5eed_0001, tol: 1e-9, max_restarts: 40 }
    }
}

/// Block Krylov iteration on `K^-1 B`, self-adjoint in the `B` inner
/// product, with full reorthogonalization and thick restarts.
pub fn stokes_eigenbasis_krylov(grid: &Grid, m: usize, opts: &KrylovOptions) -> Result<Vec<StokesEigenpair>> {
    check_request(grid, m)?;
    let n = grid.len();
    // extra vectors so that a degenerate pair is never split at the cut
    let nev = (m + 4).min(n);
    let bs = opts.block.max(1);
    let kmax = (2 * nev + 4 * bs).max(nev + 40).min(n);
    let mut solver = FlowSolver::new(*grid);
    let mut op = |bq: &[f64]| -> Result<Vec<f64>> {
        Ok(solver.solve_clamped(&ScalarField::from_vec_unchecked(*grid, bq.to_vec()))?.into_values())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut pending: Vec<Vec<f64>> =
        (0..bs).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut bq: Vec<Vec<f64>> = Vec::new();
    let mut w: Vec<Vec<f64>> = Vec::new();
    let mut last_report = String::new();

    for _restart in 0..=opts.max_restarts {
        while q.len() < kmax && !pending.is_empty() {
            let mut fresh = Vec::new();
            for mut v in std::mem::take(&mut pending) {
                if q.len() >= kmax {
                    break;
                }
                let before = dot(&v, &b_apply(&v, grid)).sqrt();
                if before == 0.0 || !before.is_finite() {
                    continue;
                }
                // two passes of classical Gram-Schmidt in the B inner product
                for _ in 0..2 {
                    let coeffs: Vec<f64> = bq.iter().map(|b| dot(b, &v)).collect();
                    for (c, qi) in coeffs.iter().zip(&q) {
                        for (a, b) in v.iter_mut().zip(qi) {
                            *a -= c * b;
                        }
                    }
                }
                let bv = b_apply(&v, grid);
                let after = dot(&v, &bv).sqrt();
                if after <= 1e-10 * before {
                    continue;
                }
                let inv = 1.0 / after;
                v.iter_mut().for_each(|a| *a *= inv);
                let bv: Vec<f64> = bv.into_iter().map(|a| a * inv).collect();
                let wv = op(&bv)?;
                fresh.push(wv.clone());
                q.push(v);
                bq.push(bv);
                w.push(wv);
            }
            pending = fresh;
        }

        let dim = q.len();
        if dim < nev {
            return Err(Error::Numerical(format!("Krylov space stalled at dimension {dim} < {nev}")));
        }
        // Rayleigh-Ritz on T = (B Q)^T W
        let mut t = DMatrix::<f64>::zeros(dim, dim);
        for i in 0..dim {
            for j in i..dim {
                let a = 0.5 * (dot(&bq[i], &w[j]) + dot(&bq[j], &w[i]));
                t[(i, j)] = a;
                t[(j, i)] = a;
            }
        }
        let eig = SymmetricEigen::new(t);
        let mut order: Vec<usize> = (0..dim).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let combine = |basis: &[Vec<f64>], s: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; n];
            for (c, col) in s.iter().zip(basis) {
                if *c != 0.0 {
                    for (o, x) in out.iter_mut().zip(col) {
                        *o += c * x;
                    }
                }
            }
            out
        };
        let keep = (nev + bs).min(dim);
        let mut ritz_q = Vec::with_capacity(keep);
        let mut ritz_bq = Vec::with_capacity(keep);
        let mut ritz_w = Vec::with_capacity(keep);
        let mut residuals = Vec::with_capacity(keep);
        let mut worst = 0.0_f64;
        for (rank, &i) in order.iter().take(keep).enumerate() {
            let s: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let theta = eig.eigenvalues[i];
            let y = combine(&q, &s);
            let by = combine(&bq, &s);
            let wy = combine(&w, &s);
            let r: Vec<f64> = wy.iter().zip(&y).map(|(a, b)| a - theta * b).collect();
            let rn = dot(&r, &b_apply(&r, grid)).sqrt() / theta.abs();
            if rank < nev {
                worst = worst.max(rn);
            }
            residuals.push((rn, r));
            ritz_q.push(y);
            ritz_bq.push(by);
            ritz_w.push(wy);
        }
        if worst <= opts.tol {
            let pairs = ritz_q
                .into_iter()
                .zip(order.iter().take(keep))
                .map(|(psi, &i)| (1.0 / eig.eigenvalues[i], psi))
                .collect();
            return finish(grid, pairs, m);
        }
        last_report = format!("dimension {dim}, worst relative residual {worst:.3e} (tol {:.1e})", opts.tol);
        // thick restart: keep the leading Ritz vectors, extend along the
        // residuals of the unconverged ones
        let mut unconverged: Vec<Vec<f64>> = residuals
            .iter()
            .take(nev)
            .filter(|(rn, _)| *rn > opts.tol)
            .map(|(_, r)| r.clone())
            .take(bs)
            .collect();
        if unconverged.is_empty() {
            unconverged = residuals.iter().skip(nev).map(|(_, r)| r.clone()).take(bs).collect();
        }
        q = ritz_q;
        bq = ritz_bq;
        w = ritz_w;
        pending = unconverged;
    }
    Err(Error::Numerical(format!("Stokes eigensolver did not converge: {last_report}")))
}

/// Sorts, normalizes, resolves degenerate clusters by x-reflection parity,
/// fixes signs and truncates to `m`.
fn finish(grid: &Grid, mut pairs: Vec<(f64, Vec<f64>)>, m: usize) -> Result<Vec<StokesEigenpair>> {
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (eta, psi) in pairs.iter_mut() {
        if !(eta.is_finite() && *eta > 0.0) {
            return Err(Error::Numerical(format!("non-positive Stokes eigenvalue {eta}")));
        }
        let norm = (dot(psi, &b_apply(psi, grid)) * grid.cell_area()).sqrt();
        psi.iter_mut().for_each(|v| *v /= norm);
    }
    let reflect = |v: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for i in 0..grid.nx {
            for j in 0..grid.ny {
                out[grid.idx(grid.nx - 1 - i, j)] = v[grid.idx(i, j)];
            }
        }
        out
    };
    let mut start = 0;
    while start < pairs.len() {
        let mut end = start + 1;
        while end < pairs.len() && (pairs[end].0 - pairs[start].0).abs() <= 1e-7 * pairs[start].0 {
            end += 1;
        }
        if end - start > 1 {
            let size = end - start;
            let bvs: Vec<Vec<f64>> = pairs[start..end].iter().map(|(_, p)| b_apply(p, grid)).collect();
            let refl: Vec<Vec<f64>> = pairs[start..end].iter().map(|(_, p)| reflect(p)).collect();
            let mut s = DMatrix::<f64>::zeros(size, size);
            for a in 0..size {
                for b in 0..size {
                    s[(a, b)] = dot(&bvs[a], &refl[b]) * grid.cell_area();
                }
            }
            let s = (&s + s.transpose()) * 0.5;
            let eig = SymmetricEigen::new(s);
            let mut order: Vec<usize> = (0..size).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
            let old: Vec<Vec<f64>> = pairs[start..end].iter().map(|(_, p)| p.clone()).collect();
            let etas: Vec<f64> = pairs[start..end].iter().map(|p| p.0).collect();
            for (slot, &col) in order.iter().enumerate() {
                let mut v = vec![0.0; old[0].len()];
                for (c, p) in eig.eigenvectors.column(col).iter().zip(&old) {
                    for (o, x) in v.iter_mut().zip(p) {
                        *o += c * x;
                    }
                }
                pairs[start + slot] = (etas[slot], v);
            }
        }
        start = end;
    }
    let out = pairs
        .into_iter()
        .take(m)
        .map(|(eta, mut psi)| {
            // deterministic sign: positive projection on a fixed generic weight
            let s: f64 = (0..grid.nx)
                .flat_map(|i| (0..grid.ny).map(move |j| (i, j)))
                .map(|(i, j)| psi[grid.idx(i, j)] * (1.0 + grid.x(i) + std::f64::consts::SQRT_2 * grid.y(j)))
                .sum();
            if s < 0.0 {
                psi.iter_mut().for_each(|v| *v = -*v);
            }
            let psi = ScalarField::from_vec_unchecked(*grid, psi);
            let w = velocity_from_streamfunction(&psi);
            StokesEigenpair { eta, psi, w }
        })
        .collect();
    Ok(out)
}

/// Velocity inner product `(grad-perp a, grad-perp b)` of two stream
/// functions, edge based.
pub fn velocity_inner(a: &ScalarField, b: &ScalarField) -> f64 {
    -a.dot(&laplacian(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_grid;
    use crate::stokes::apply_clamped;
    use std::f64::consts::PI;

    #[test]
    fn dense_and_krylov_agree() {
        let g = build_grid(PI, PI, 18, 18).unwrap();
        let d = stokes_eigenbasis_dense(&g, 10).unwrap();
        let k = stokes_eigenbasis_krylov(&g, 10, &KrylovOptions::default()).unwrap();
        for (a, b) in d.iter().zip(&k) {
            assert!((a.eta - b.eta).abs() < 1e-8 * a.eta, "{} vs {}", a.eta, b.eta);
        }
        // nondegenerate modes agree as fields up to the fixed sign
        for (a, b) in d.iter().zip(&k).take(2) {
            assert!(a.psi.max_abs_diff(&b.psi) < 1e-6 * a.psi.max_abs());
        }
    }

    #[test]
    fn eigenpairs_satisfy_the_generalized_problem() {
        let g = build_grid(1.0, 1.5, 30, 40).unwrap();
        let pairs = stokes_eigenbasis(&g, 12).unwrap();
        for p in &pairs {
            let k = apply_clamped(&p.psi);
            let b = laplacian(&p.psi).scaled(-p.eta);
            assert!(k.max_abs_diff(&b) < 1e-6 * k.max_abs(), "eta {}", p.eta);
        }
        for w in pairs.windows(2) {
            assert!(w[0].eta <= w[1].eta);
        }
    }

    #[test]
    fn gram_is_identity() {
        let g = build_grid(PI, PI, 32, 32).unwrap();
        let pairs = stokes_eigenbasis(&g, 16).unwrap();
        for (i, a) in pairs.iter().enumerate() {
            for (j, b) in pairs.iter().enumerate() {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((velocity_inner(&a.psi, &b.psi) - e).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn rejects_bad_counts() {
        let g = build_grid(1.0, 1.0, 4, 4).unwrap();
        assert!(stokes_eigenbasis(&g, 0).is_err());
        assert!(stokes_eigenbasis(&g, 17).is_err());
    }
}
