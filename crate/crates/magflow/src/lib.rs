//! magflow: a numerical laboratory for magnetic geodesic flows on flat tori
//! with conformally flat metrics.
//!
//! The crate integrates the twisted Hamiltonian flow on the energy level
//! `{H = 1/2}`, propagates the linearized (variational) flow to detect
//! conjugate points, integrates the associated matrix Riccati equation, and
//! evaluates curvature-type averages over the energy level by spectral
//! quadrature. See the `examples/` directory for one runnable example per
//! capability, and the `magflow` binary for the file-driven experiment
//! front end.

pub mod averaging;
pub mod dynamics;
pub mod fourier;
pub mod lab;
pub mod model;
pub mod ode;
pub mod variational;

pub use dynamics::{PhasePoint, Trajectory};
pub use model::{ConformalFactor, Formulation, GaugeData, MagneticModel, OneForm, TwoForm};
