//! The twisted geodesic flow on the energy level `{H = 1/2}`.
//!
//! Two equivalent formulations are integrated:
//!
//! * twisted: Hamiltonian `H` with the magnetic force term `beta(q) qdot`;
//! * gauged: Hamiltonian `Ht(p,q) = H(p - alpha(q), q)` with the constant
//!   twist `Gamma qdot`.
//!
//! Sign convention (the 2-form fixes the force only up to orientation; this
//! choice makes `(q1, q2)` rotate clockwise for a positive constant field on
//! `T^2` and is locked in by tests):
//!
//! ```text
//! qdot = H_p,    pdot_i = -H_{q_i} + sum_j beta_ij(q) qdot_j
//! ```
//!
//! The two formulations are intertwined by the fiber-preserving map
//! `(q, p) -> (q, p + alpha(q))`.

use crate::fourier::wrap_torus;
use crate::model::{Formulation, MagneticModel};
use crate::ode::{integrate_at, OdeError, OdeOptions, OdeStats, OdeSystem};
use nalgebra::DVector;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("kinetic momentum vanishes; cannot normalize onto {{H = 1/2}}")]
    ZeroVelocity,
    #[error(transparent)]
    Ode(#[from] OdeError),
}

/// A point `(q, p)` of phase space. `q` is a lift to `R^n`; use
/// [`PhasePoint::q_wrapped`] for the canonical torus representative.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub q: DVector<f64>,
    pub p: DVector<f64>,
}

impl PhasePoint {
    pub fn new(q: DVector<f64>, p: DVector<f64>) -> Self {
        assert_eq!(q.len(), p.len());
        PhasePoint { q, p }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn q_wrapped(&self) -> DVector<f64> {
        wrap_torus(&self.q)
    }

    pub fn from_state(y: &DVector<f64>) -> Self {
        let n = y.len() / 2;
        PhasePoint { q: y.rows(0, n).into_owned(), p: y.rows(n, n).into_owned() }
    }

    pub fn to_state(&self) -> DVector<f64> {
        let n = self.dim();
        let mut y = DVector::zeros(2 * n);
        y.rows_mut(0, n).copy_from(&self.q);
        y.rows_mut(n, n).copy_from(&self.p);
        y
    }
}

/// Time-stamped orbit samples plus integrator statistics.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub formulation: Formulation,
    pub samples: Vec<(f64, PhasePoint)>,
    pub energy_drift: f64,
    pub stats: OdeStats,
}

impl Trajectory {
    /// CSV dump: header `t,q1..qn,p1..pn,H`, floats with 17 significant
    /// digits (exact round-trip). `q` is wrapped to `[0, 2*pi)`.
    pub fn write_csv<W: Write>(&self, model: &MagneticModel, mut w: W) -> std::io::Result<()> {
        let n = self.samples.first().map_or(0, |(_, x)| x.dim());
        let mut header = String::from("t");
        for i in 1..=n {
            header.push_str(&format!(",q{i}"));
        }
        for i in 1..=n {
            header.push_str(&format!(",p{i}"));
        }
        header.push_str(",H");
        writeln!(w, "{header}")?;
        for (t, x) in &self.samples {
            let qw = x.q_wrapped();
            let h = model.hamiltonian(self.formulation, qw.as_slice(), &x.p);
            let mut line = fmt17(*t);
            for v in qw.iter().chain(x.p.iter()) {
                line.push(',');
                line.push_str(&fmt17(*v));
            }
            line.push(',');
            line.push_str(&fmt17(h));
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// 17 significant digits, round-trip exact for f64.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Phase-space vector field of the chosen formulation.
pub fn vector_field(model: &MagneticModel, which: Formulation, x: &PhasePoint) -> (DVector<f64>, DVector<f64>) {
    let q = x.q_wrapped();
    let b = model.hamiltonian_blocks(which, q.as_slice(), &x.p);
    let qdot = b.d_p;
    let force = match which {
        Formulation::Twisted => model.beta().matrix_at(q.as_slice()) * &qdot,
        Formulation::Gauged => model.gauge().gamma() * &qdot,
    };
    let pdot = -b.d_q + force;
    (qdot, pdot)
}

/// `(q, p) -> (q, p + alpha(q))`: maps twisted initial data to gauged.
pub fn to_gauged(model: &MagneticModel, x: &PhasePoint) -> PhasePoint {
    let a = model.gauge().alpha().eval(x.q_wrapped().as_slice());
    PhasePoint::new(x.q.clone(), &x.p + a)
}

/// Inverse of [`to_gauged`].
pub fn to_twisted(model: &MagneticModel, x: &PhasePoint) -> PhasePoint {
    let a = model.gauge().alpha().eval(x.q_wrapped().as_slice());
    PhasePoint::new(x.q.clone(), &x.p - a)
}

/// Rescale the kinetic momentum so the point lies on `{H = 1/2}`.
pub fn normalize_energy(
    model: &MagneticModel,
    which: Formulation,
    x: &PhasePoint,
) -> Result<PhasePoint, DynamicsError> {
    let q = x.q_wrapped();
    let lam = model.lambda().eval(q.as_slice());
    let kin = match which {
        Formulation::Twisted => x.p.clone(),
        Formulation::Gauged => &x.p - model.gauge().alpha().eval(q.as_slice()),
    };
    let norm = kin.norm();
    if norm * lam.sqrt() < 1e-14 {
        return Err(DynamicsError::ZeroVelocity);
    }
    let scaled = &kin / (norm * lam.sqrt());
    let p = match which {
        Formulation::Twisted => scaled,
        Formulation::Gauged => scaled + model.gauge().alpha().eval(q.as_slice()),
    };
    Ok(PhasePoint::new(x.q.clone(), p))
}

/// Controller options for a user-facing flow tolerance. The requested `tol`
/// targets accumulated invariant drift over long horizons, so the per-step
/// controller runs a factor tighter.
pub fn flow_options(tol: f64) -> OdeOptions {
    OdeOptions::with_tol(tol / 20.0)
}

/// The flow as an [`OdeSystem`] over the state `(q, p)` in `R^{2n}`.
pub struct FlowSystem<'a> {
    pub model: &'a MagneticModel,
    pub which: Formulation,
}

impl OdeSystem for FlowSystem<'_> {
    fn dim(&self) -> usize {
        2 * self.model.dim()
    }
    fn eval(&self, _t: f64, y: &DVector<f64>, dydt: &mut DVector<f64>) {
        let n = self.model.dim();
        let x = PhasePoint::from_state(y);
        let (qdot, pdot) = vector_field(self.model, self.which, &x);
        dydt.rows_mut(0, n).copy_from(&qdot);
        dydt.rows_mut(n, n).copy_from(&pdot);
    }
}

/// Integrate the flow from `x0` over `[0, T]`, sampling at `n_samples + 1`
/// equally spaced times (endpoints included). `q` accumulates an unwrapped
/// lift along the orbit.
pub fn integrate(
    model: &MagneticModel,
    which: Formulation,
    x0: &PhasePoint,
    t_final: f64,
    tol: f64,
    n_samples: usize,
) -> Result<Trajectory, DynamicsError> {
    assert!(t_final > 0.0, "T must be positive");
    assert!((1e-13..=1e-4).contains(&tol), "tol must lie in [1e-13, 1e-4]");
    let times: Vec<f64> = (0..=n_samples.max(1))
        .map(|i| t_final * i as f64 / n_samples.max(1) as f64)
        .collect();
    let sys = FlowSystem { model, which };
    let (states, stats) = integrate_at(&sys, 0.0, x0.to_state(), &times, flow_options(tol))?;
    let samples: Vec<(f64, PhasePoint)> = times
        .iter()
        .zip(&states)
        .map(|(&t, y)| (t, PhasePoint::from_state(y)))
        .collect();
    let h0 = model.hamiltonian(which, samples[0].1.q_wrapped().as_slice(), &samples[0].1.p);
    let energy_drift = samples
        .iter()
        .map(|(_, x)| (model.hamiltonian(which, x.q_wrapped().as_slice(), &x.p) - h0).abs())
        .fold(0.0, f64::max);
    Ok(Trajectory { formulation: which, samples, energy_drift, stats })
}
