use std::ffi::{CStr, CString};
use std::ptr;

use ks_stokes_ffi::*;

fn last_error() -> String {
    let p = ks_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn lifecycle_and_diagnostics() {
    let cfg = CString::new("nx = 16\nny = 16\nmass = 2.0\ng = 5.0\n").unwrap();
    let mut sim = ptr::null_mut();
    unsafe {
        assert_eq!(ks_simulation_from_toml(cfg.as_ptr(), &mut sim), KsStatus::Ok);
        assert_eq!(ks_simulation_len(sim), 256);
        let mut before = KsDiagnostics::default();
        assert_eq!(ks_simulation_diagnostics(sim, &mut before), KsStatus::Ok);
        assert!((before.mass - 2.0).abs() < 1e-12);

        let mut dt = 0.0;
        assert_eq!(ks_simulation_step(sim, 1e-3, &mut dt), KsStatus::Ok);
        assert!(dt > 0.0 && dt <= 1e-3);
        assert_eq!(ks_simulation_advance(sim, 0.02, 1e-3), KsStatus::Ok);
        assert!((ks_simulation_time(sim) - 0.02).abs() < 1e-12);

        let mut after = KsDiagnostics::default();
        assert_eq!(ks_simulation_diagnostics(sim, &mut after), KsStatus::Ok);
        assert!(after.mass < before.mass && after.mass > 0.0);
        assert!(after.l2_u > 0.0);
        assert!(after.criterion_integral > 0.0);

        let mut rho = vec![0.0; 256];
        assert_eq!(ks_simulation_density(sim, rho.as_mut_ptr(), rho.len()), KsStatus::Ok);
        assert!(rho.iter().all(|v| *v >= -1e-10));
        assert_eq!(ks_simulation_density(sim, rho.as_mut_ptr(), 3), KsStatus::InvalidArgument);
        ks_simulation_free(sim);
    }
}

#[test]
fn set_density_replaces_state() {
    let mut sim = ptr::null_mut();
    unsafe {
        assert_eq!(ks_simulation_new(1.0, 1.0, 8, 8, 0.0, &mut sim), KsStatus::Ok);
        let values = vec![1.0; 64];
        assert_eq!(ks_simulation_set_density(sim, values.as_ptr(), 64), KsStatus::Ok);
        let mut d = KsDiagnostics::default();
        ks_simulation_diagnostics(sim, &mut d);
        assert!((d.mass - 64.0 / 81.0).abs() < 1e-12);
        let bad = vec![f64::NAN; 64];
        assert_eq!(ks_simulation_set_density(sim, bad.as_ptr(), 64), KsStatus::Numerical);
        ks_simulation_free(sim);
    }
}

#[test]
fn error_codes_and_messages() {
    let mut sim = ptr::null_mut();
    unsafe {
        assert_eq!(ks_simulation_new(-1.0, 1.0, 8, 8, 0.0, &mut sim), KsStatus::Config);
        assert!(last_error().contains("lx"));
        assert!(sim.is_null());
        assert_eq!(ks_simulation_new(1.0, 1.0, 8, 8, 0.0, ptr::null_mut()), KsStatus::NullPointer);
        let cfg = CString::new("nx = 16\nunknown_key = 3\n").unwrap();
        assert_eq!(ks_simulation_from_toml(cfg.as_ptr(), &mut sim), KsStatus::Parse);
        assert!(last_error().contains("unknown_key"));
        assert_eq!(ks_simulation_step(ptr::null_mut(), 1e-3, ptr::null_mut()), KsStatus::NullPointer);
        assert!(ks_simulation_time(ptr::null()).is_nan());
        ks_simulation_free(ptr::null_mut());
    }
}

#[test]
fn poisson_and_moser() {
    let (nx, ny) = (15, 15);
    let h = 1.0 / 16.0;
    let pi = std::f64::consts::PI;
    // discrete eigenfunction: the solve is exact up to roundoff
    let lam = 2.0 * 4.0 * (pi * h / 2.0).sin().powi(2) / (h * h);
    let f: Vec<f64> = (0..nx * ny)
        .map(|k| {
            let (i, j) = (k / ny, k % ny);
            ((i + 1) as f64 * pi * h).sin() * ((j + 1) as f64 * pi * h).sin()
        })
        .collect();
    let mut u = vec![0.0; nx * ny];
    unsafe {
        assert_eq!(ks_solve_poisson(1.0, 1.0, nx, ny, f.as_ptr(), u.as_mut_ptr()), KsStatus::Ok);
    }
    for (a, b) in u.iter().zip(&f) {
        assert!((a - b / lam).abs() < 1e-13);
    }
    let mut p = 0.0;
    unsafe {
        assert_eq!(ks_moser_partial_product(1, 2, &mut p), KsStatus::Ok);
        assert_eq!(p, 1.5);
        assert_eq!(ks_moser_partial_product(1, 5, &mut p), KsStatus::InvalidArgument);
    }
}

#[test]
fn header_is_generated() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/ks_stokes.h")).unwrap();
    for sym in ["ks_simulation_new", "ks_simulation_step", "ks_last_error_message", "KS_STATUS_NULL_POINTER", "typedef struct KsSimulation KsSimulation"] {
        assert!(header.contains(sym), "{sym}");
    }
    let v = unsafe { CStr::from_ptr(ks_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
