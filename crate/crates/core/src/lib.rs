//! Keller-Segel chemotaxis coupled to Stokes-Boussinesq flow on a rectangle
//! with homogeneous Dirichlet boundary conditions.

pub mod error;
pub mod geometry;
pub mod spectral;
pub mod stokes;
pub mod chemotaxis;
pub mod diagnostics;
pub mod galerkin;
pub mod harness;

pub use error::{Error, Result};
