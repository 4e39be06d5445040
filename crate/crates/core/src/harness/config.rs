use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::chemotaxis::Physics;
use crate::diagnostics::BlowupCeilings;
use crate::error::{invalid, Error, Result};
use crate::geometry::{build_grid, Grid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    Fd,
    Galerkin,
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fd" => Ok(Backend::Fd),
            "galerkin" => Ok(Backend::Galerkin),
            other => Err(invalid(format!("unknown backend {other:?}; expected fd or galerkin"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensityFamily {
    /// Mass-normalized Gaussian bump, tapered to vanish on the walls.
    Gaussian,
    /// One Laplacian eigenfunction scaled by `amplitude`.
    Mode,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowFamily {
    Rest,
    /// `amplitude sin^2(pi x / Lx) sin^2(pi y / Ly)`.
    Sine,
    /// `amplitude` times the first Stokes stream eigenfunction.
    Stokes,
}

/// One experiment. Keys mirror the TOML file one to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub lx: f64,
    pub ly: f64,
    pub nx: usize,
    pub ny: usize,
    pub backend: Backend,
    /// Laplacian and Stokes mode counts of the Galerkin backend.
    pub modes_n: usize,
    pub modes_m: usize,
    pub density: DensityFamily,
    pub mass: f64,
    pub x0: f64,
    pub y0: f64,
    pub sigma: f64,
    pub mode_k1: usize,
    pub mode_k2: usize,
    pub amplitude: f64,
    pub flow: FlowFamily,
    pub flow_amplitude: f64,
    pub g: f64,
    pub t_end: f64,
    pub dt_target: f64,
    pub cfl: f64,
    pub snapshot_stride: usize,
    pub linf_ceiling: f64,
    pub rate_growth: f64,
    pub rate_span: usize,
    pub max_halvings: u32,
    /// Quench threshold on `||rho||^2`; defaults to `0.01 min(1, lambda_1)`.
    pub eps_quench: Option<f64>,
    pub chemotaxis: bool,
    pub advection: bool,
    /// Keep the density at its initial value and evolve only the flow.
    pub frozen_density: bool,
    pub dump_fields: bool,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let pi = std::f64::consts::PI;
        Self {
            lx: pi,
            ly: pi,
            nx: 64,
            ny: 64,
            backend: Backend::Fd,
            modes_n: 32,
            modes_m: 32,
            density: DensityFamily::Gaussian,
            mass: 1.0,
            x0: pi / 2.0,
            y0: pi / 2.0,
            sigma: 0.3,
            mode_k1: 1,
            mode_k2: 1,
            amplitude: 1.0,
            flow: FlowFamily::Rest,
            flow_amplitude: 0.0,
            g: 0.0,
            t_end: 1.0,
            dt_target: 1e-3,
            cfl: 0.4,
            snapshot_stride: 10,
            linf_ceiling: 1e8,
            rate_growth: 10.0,
            rate_span: 10,
            max_halvings: 30,
            eps_quench: None,
            chemotaxis: true,
            advection: true,
            frozen_density: false,
            dump_fields: false,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            Error::Parse { line, message: e.message().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lx", self.lx),
            ("ly", self.ly),
            ("t_end", self.t_end),
            ("dt_target", self.dt_target),
            ("cfl", self.cfl),
            ("linf_ceiling", self.linf_ceiling),
            ("rate_growth", self.rate_growth),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.nx < 3 || self.ny < 3 {
            return Err(Error::Config(format!("grid must be at least 3x3, got {}x{}", self.nx, self.ny)));
        }
        if self.cfl > 1.0 {
            return Err(Error::Config(format!("cfl must be at most 1, got {}", self.cfl)));
        }
        if self.snapshot_stride == 0 || self.rate_span < 2 {
            return Err(Error::Config("snapshot_stride must be at least 1 and rate_span at least 2".into()));
        }
        if !(self.g >= 0.0 && self.g.is_finite()) {
            return Err(Error::Config(format!("g must be nonnegative, got {}", self.g)));
        }
        if let Some(e) = self.eps_quench {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::Config(format!("eps_quench must be positive, got {e}")));
            }
        }
        match self.density {
            DensityFamily::Gaussian => {
                if !(self.mass >= 0.0 && self.mass.is_finite()) || !(self.sigma > 0.0) {
                    return Err(Error::Config("gaussian data needs mass >= 0 and sigma > 0".into()));
                }
                if !(0.0..=self.lx).contains(&self.x0) || !(0.0..=self.ly).contains(&self.y0) {
                    return Err(Error::Config(format!("bump center ({}, {}) outside the domain", self.x0, self.y0)));
                }
            }
            DensityFamily::Mode => {
                if self.mode_k1 == 0 || self.mode_k2 == 0 || self.mode_k1 > self.nx || self.mode_k2 > self.ny {
                    return Err(Error::Config(format!("mode ({}, {}) not resolved", self.mode_k1, self.mode_k2)));
                }
            }
            DensityFamily::Zero => {}
        }
        if self.backend == Backend::Galerkin && (self.modes_n == 0 || self.modes_m == 0) {
            return Err(Error::Config("galerkin backend needs modes_n, modes_m >= 1".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        build_grid(self.lx, self.ly, self.nx, self.ny)
    }

    pub fn physics(&self) -> Physics {
        Physics { chemotaxis: self.chemotaxis, advection: self.advection }
    }

    pub fn ceilings(&self) -> BlowupCeilings {
        BlowupCeilings { linf: self.linf_ceiling, rate_growth: self.rate_growth, rate_span: self.rate_span }
    }

    pub fn quench_threshold(&self) -> Result<f64> {
        Ok(self.eps_quench.unwrap_or_else(|| 0.01 * self.grid().map_or(1.0, |g| g.domain.lambda1()).min(1.0)))
    }
}

/// Command-line overrides applied on top of a config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub g: Option<f64>,
    pub t_end: Option<f64>,
    pub grid: Option<(usize, usize)>,
    pub backend: Option<Backend>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(g) = self.g {
            cfg.g = g;
        }
        if let Some(t) = self.t_end {
            cfg.t_end = t;
        }
        if let Some((nx, ny)) = self.grid {
            cfg.nx = nx;
            cfg.ny = ny;
        }
        if let Some(b) = self.backend {
            cfg.backend = b;
        }
        if let Some(o) = &self.out {
            cfg.out = Some(o.clone());
        }
        cfg.validate()
    }
}

/// `"128"` or `"128x64"`.
pub fn parse_grid(s: &str) -> Result<(usize, usize)> {
    let bad = || invalid(format!("grid must look like 128 or 128x64, got {s:?}"));
    match s.split_once(['x', 'X']) {
        Some((a, b)) => Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?)),
        None => {
            let n = s.trim().parse().map_err(|_| bad())?;
            Ok((n, n))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn parses_flat_keys() {
        let cfg = RunConfig::from_toml_str("nx = 32\nny = 16\ng = 100.0\nbackend = \"galerkin\"\nflow = \"stokes\"\n").unwrap();
        assert_eq!((cfg.nx, cfg.ny, cfg.g), (32, 16, 100.0));
        assert_eq!(cfg.backend, Backend::Galerkin);
        assert_eq!(cfg.flow, FlowFamily::Stokes);
    }

    #[test]
    fn reports_line_of_bad_key() {
        match RunConfig::from_toml_str("nx = 32\n\nbogus = 1\n") {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("bogus"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(RunConfig::from_toml_str("t_end = -1.0"), Err(Error::Config(_))));
    }

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig { eps_quench: Some(0.02), out: Some("runs/a".into()), ..RunConfig::default() };
        assert_eq!(RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
    }

    #[test]
    fn grid_strings() {
        assert_eq!(parse_grid("128").unwrap(), (128, 128));
        assert_eq!(parse_grid("64x32").unwrap(), (64, 32));
        assert!(parse_grid("a").is_err());
    }
}
