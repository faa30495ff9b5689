//! Numerical laboratory for fully nonlinear nonlocal elliptic equations of
//! order `σ ∈ (0, 2)` on the unit ball.
//!
//! Discrete solutions of the Dirichlet problem come from monotone
//! quadrature schemes; they stand in for viscosity solutions.

pub mod diagnostics;
pub mod error;
pub mod fields;
pub mod kernels;
pub mod numerics;
pub mod operators;
pub mod probes;
pub mod solvers;

pub use error::{Error, Result};

/// Points and offsets are stored in two coordinates; in 1D the second is 0.
pub type Point = [f64; 2];

pub fn norm(p: Point) -> f64 {
    p[0].hypot(p[1])
}

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
