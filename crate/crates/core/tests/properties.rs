use ks_stokes::chemotaxis::{cfl_limit, step_density, DensityState, Physics};
use ks_stokes::diagnostics::{moser_closed_form, moser_partial_product};
use ks_stokes::galerkin::{assemble_tensors, CoefficientTensors, GalerkinBasis};
use ks_stokes::geometry::{build_grid, integrate, laplacian, stencil_wall_flux, Grid, ScalarField};
use ks_stokes::spectral::solve_poisson;
use ks_stokes::stokes::face_velocity;
use proptest::prelude::*;
use std::sync::OnceLock;

fn grid_strategy() -> impl Strategy<Value = Grid> {
    (4usize..24, 4usize..24, 0.5f64..4.0, 0.5f64..4.0).prop_map(|(nx, ny, lx, ly)| build_grid(lx, ly, nx, ny).unwrap())
}

fn field_on(g: Grid, lo: f64, hi: f64) -> impl Strategy<Value = ScalarField> {
    prop::collection::vec(lo..hi, g.len()).prop_map(move |v| ScalarField::from_values(g, v).unwrap())
}

fn grid_and_fields(lo: f64, hi: f64) -> impl Strategy<Value = (ScalarField, ScalarField)> {
    grid_strategy().prop_flat_map(move |g| (field_on(g, lo, hi), field_on(g, lo, hi)))
}

fn tensors() -> &'static CoefficientTensors {
    static T: OnceLock<CoefficientTensors> = OnceLock::new();
    T.get_or_init(|| assemble_tensors(&GalerkinBasis::new(build_grid(2.0, 3.0, 20, 24).unwrap(), 10, 8).unwrap()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn poisson_is_linear((f, h) in grid_and_fields(-1.0, 1.0), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let combo = f.zip_map(&h, |x, y| a * x + b * y);
        let lhs = solve_poisson(&combo);
        let rhs = solve_poisson(&f).zip_map(&solve_poisson(&h), |x, y| a * x + b * y);
        prop_assert!(lhs.max_abs_diff(&rhs) <= 1e-10 * (1.0 + rhs.max_abs()));
    }

    #[test]
    fn poisson_preserves_sign((f, _) in grid_and_fields(0.0, 1.0)) {
        let u = solve_poisson(&f);
        prop_assert!(u.min() >= -1e-12 * (1.0 + u.max_abs()));
    }

    #[test]
    fn poisson_inverts_negative_laplacian((f, _) in grid_and_fields(-1.0, 1.0)) {
        let back = laplacian(&solve_poisson(&f)).scaled(-1.0);
        prop_assert!(back.max_abs_diff(&f) <= 1e-10);
    }

    #[test]
    fn laplacian_integrates_to_wall_flux((f, _) in grid_and_fields(-1.0, 1.0)) {
        let total = integrate(&laplacian(&f));
        let wall = stencil_wall_flux(&f, |_, _| 1.0);
        let g = f.grid();
        let scale = f.max_abs() * (g.domain.lx / g.hy + g.domain.ly / g.hx);
        prop_assert!((total - wall).abs() <= 1e-12 * scale);
    }

    #[test]
    fn density_step_keeps_sign_and_accounts_for_mass(
        (rho, psi) in grid_and_fields(0.0, 1.0),
        frac in 0.05f64..1.0,
    ) {
        let physics = Physics::default();
        let s = DensityState::new(rho, physics, 0.0);
        let faces = face_velocity(&psi.scaled(0.1));
        let dt = (frac * cfl_limit(&s.c, &faces, 0.4)).min(0.05);
        let next = step_density(&s, &faces, dt, 0.4, physics).unwrap();
        prop_assert!(next.rho.min() >= -1e-12 * next.rho.max_abs().max(1.0));
        let lost = integrate(&next.rho) - integrate(&s.rho);
        let wall = dt * stencil_wall_flux(&next.rho, |_, _| 1.0);
        prop_assert!((lost - wall).abs() <= 1e-12 * (1.0 + integrate(&s.rho)), "{lost} vs {wall}");
        prop_assert!(wall <= 0.0);
    }

    #[test]
    fn modal_advection_carries_no_energy(
        rho in prop::collection::vec(-1.0f64..1.0, 10),
        u in prop::collection::vec(-1.0f64..1.0, 8),
    ) {
        let t = tensors();
        let mut e = 0.0;
        let mut scale = 0.0;
        for l in 0..t.n {
            for j in 0..t.m {
                for k in 0..t.n {
                    let term = rho[l] * t.c_at(l, j, k) * u[j] * rho[k];
                    e += term;
                    scale += term.abs();
                }
            }
        }
        prop_assert!(e.abs() <= 1e-12 * scale.max(1e-300));
    }

    #[test]
    fn moser_product_matches_closed_form(n in 0u32..200, d in 2u32..4) {
        let p = moser_partial_product(n, d).unwrap();
        prop_assert!((p - moser_closed_form(n, d)).abs() <= 1e-12);
        prop_assert!(p >= 1.0 && p <= 2.0 * (d as f64 - 1.0) + 1e-12);
    }
}
