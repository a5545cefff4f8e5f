//! A numerical laboratory for planar n-body collision dynamics.
//!
//! The crate follows a collapsing cluster of bodies through three coordinate
//! layers and verifies the quantitative structure of the collision:
//!
//! - [`nbody`] — Cartesian ground truth: masses, states, forces, and the
//!   per-cluster scalars (size, angular momenta, energies).
//! - [`jacobi`] / [`shape`] — relative Jacobi coordinates of a cluster and
//!   the size-rotation-shape chart on top of them, with the Fubini-Study
//!   kinetic quantities and the shape potential.
//! - [`blowup`] — the McGehee-regularized vector fields: the autonomous
//!   collision-manifold system, the full non-autonomous system, and the
//!   decaying perturbation terms.
//! - [`cc`] — central configurations: Newton solver, multistart enumeration,
//!   catalog distances.
//! - [`odeint`] — adaptive embedded Runge-Kutta integration (plain f64 or
//!   double-double precision) with dense output, event detection, and
//!   collision shooting.
//! - [`asymptotics`] — estimation of the collision time and point, power-law
//!   fits, and verification of the collision-rate and perturbation-decay
//!   laws.
//! - [`segment`] — cone constants, exponentially shrinking isolating
//!   segments around perturbed orbits, and shadowing-distance diagnostics.
//! - [`scenario`] / [`cli`] — JSON-configured runs and the command-line
//!   front end.
//!
//! Every runnable capability has a worked example under `examples/`.

pub mod asymptotics;
pub mod blowup;
pub mod cc;
pub mod cli;
pub mod dd;
pub mod error;
pub mod jacobi;
pub mod nbody;
pub mod odeint;
pub mod real;
pub mod scenario;
pub mod segment;
pub mod shape;
pub mod vec2;

pub use dd::Dd;
pub use error::{Error, Result};
pub use real::Real;
pub use vec2::Vec2;
