//! Adaptive explicit Runge-Kutta integration.
//!
//! The workhorse is the Dormand-Prince 5(4) embedded pair with a standard
//! proportional step controller and FSAL reuse. Output points are reached by
//! clamping the step, so requested sample times are hit exactly rather than
//! interpolated. A fixed-step implicit midpoint rule is provided as an
//! alternative for long-time runs.

use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OdeError {
    #[error("step size collapsed below {h_min:.3e} at t = {t:.6e}")]
    StepSizeCollapse { t: f64, h_min: f64 },
    #[error("step budget exhausted at t = {t:.6e} after {steps} steps")]
    MaxStepsExceeded { t: f64, steps: usize },
    #[error("implicit solve failed to converge at t = {t:.6e}")]
    ImplicitDiverged { t: f64 },
}

/// Right-hand side of an autonomous-or-not first-order system.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn eval(&self, t: f64, y: &DVector<f64>, dydt: &mut DVector<f64>);
}

impl<F: Fn(f64, &DVector<f64>, &mut DVector<f64>)> OdeSystem for (usize, F) {
    fn dim(&self) -> usize {
        self.0
    }
    fn eval(&self, t: f64, y: &DVector<f64>, dydt: &mut DVector<f64>) {
        (self.1)(t, y, dydt)
    }
}

/// Time-reversed view of a system: integrating it forward over `[0, T]`
/// follows the original flow backward.
pub struct Reversed<'a, S: OdeSystem>(pub &'a S);

impl<S: OdeSystem> OdeSystem for Reversed<'_, S> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn eval(&self, t: f64, y: &DVector<f64>, dydt: &mut DVector<f64>) {
        self.0.eval(-t, y, dydt);
        *dydt = -&*dydt;
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl OdeOptions {
    pub fn with_tol(tol: f64) -> Self {
        OdeOptions { rtol: tol, atol: tol, max_steps: 50_000_000 }
    }
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions::with_tol(1e-10)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OdeStats {
    pub steps: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Step-by-step Dormand-Prince 5(4) driver.
pub struct Dopri5<'a, S: OdeSystem> {
    sys: &'a S,
    opts: OdeOptions,
    t: f64,
    y: DVector<f64>,
    h: f64,
    h_min: f64,
    k1: DVector<f64>, // FSAL slope at (t, y)
    stats: OdeStats,
}

impl<'a, S: OdeSystem> Dopri5<'a, S> {
    /// `horizon` is the total integration span used for the minimum-step
    /// floor `1e-12 * max(1, horizon)`.
    pub fn new(sys: &'a S, t0: f64, y0: DVector<f64>, horizon: f64, opts: OdeOptions) -> Self {
        let mut k1 = DVector::zeros(sys.dim());
        sys.eval(t0, &y0, &mut k1);
        let h_min = 1e-12 * horizon.abs().max(1.0);
        let h = initial_step(sys, t0, &y0, &k1, &opts).max(h_min);
        Dopri5 { sys, opts, t: t0, y: y0, h, h_min, k1, stats: OdeStats { rhs_evals: 1, ..Default::default() } }
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn stats(&self) -> OdeStats {
        self.stats
    }

    pub fn current_step(&self) -> f64 {
        self.h
    }

    /// Take one accepted step, clamped so `t` never passes `t_target`.
    pub fn step_towards(&mut self, t_target: f64) -> Result<(), OdeError> {
        debug_assert!(t_target > self.t);
        let n = self.sys.dim();
        let mut k = vec![DVector::zeros(n); 7];
        loop {
            if self.stats.steps + self.stats.rejected >= self.opts.max_steps {
                return Err(OdeError::MaxStepsExceeded { t: self.t, steps: self.stats.steps });
            }
            let mut h = self.h.min(t_target - self.t);
            let clamped = h < self.h;
            if h < self.h_min && !clamped {
                return Err(OdeError::StepSizeCollapse { t: self.t, h_min: self.h_min });
            }
            // guard against a final sliver below machine resolution
            h = h.max(f64::EPSILON * self.t.abs().max(1.0) * 4.0).min(t_target - self.t);

            k[0].copy_from(&self.k1);
            for s in 1..7 {
                let mut ys = self.y.clone();
                for (j, kj) in k.iter().enumerate().take(s) {
                    ys.axpy(h * A[s][j], kj, 1.0);
                }
                let (head, tail) = k.split_at_mut(s);
                let _ = head;
                self.sys.eval(self.t + C[s] * h, &ys, &mut tail[0]);
            }
            self.stats.rhs_evals += 6;

            let mut y5 = self.y.clone();
            let mut err_vec = DVector::zeros(n);
            for s in 0..7 {
                if B5[s] != 0.0 {
                    y5.axpy(h * B5[s], &k[s], 1.0);
                }
                let d = B5[s] - B4[s];
                if d != 0.0 {
                    err_vec.axpy(h * d, &k[s], 1.0);
                }
            }
            let mut err = 0.0f64;
            for i in 0..n {
                let sc = self.opts.atol + self.opts.rtol * self.y[i].abs().max(y5[i].abs());
                let e = err_vec[i] / sc;
                err += e * e;
            }
            err = (err / n as f64).sqrt();

            if err <= 1.0 {
                self.t += h;
                self.y = y5;
                // FSAL: k7 is the slope at the new point
                self.k1.copy_from(&k[6]);
                self.stats.steps += 1;
                let fac = (0.9 * err.powf(-0.2)).clamp(0.2, 5.0);
                self.h = (h * fac).max(self.h_min);
                return Ok(());
            }
            self.stats.rejected += 1;
            let fac = (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
            let h_new = h * fac;
            if h_new < self.h_min {
                return Err(OdeError::StepSizeCollapse { t: self.t, h_min: self.h_min });
            }
            self.h = h_new;
        }
    }

    /// Advance exactly to `t_target`.
    pub fn advance_to(&mut self, t_target: f64) -> Result<(), OdeError> {
        while self.t < t_target - f64::EPSILON * t_target.abs().max(1.0) {
            self.step_towards(t_target)?;
        }
        self.t = t_target;
        Ok(())
    }
}

fn initial_step<S: OdeSystem>(
    sys: &S,
    t0: f64,
    y0: &DVector<f64>,
    f0: &DVector<f64>,
    opts: &OdeOptions,
) -> f64 {
    // Hairer-Norsett-Wanner style heuristic, simplified.
    let d0 = y0.norm().max(1e-8);
    let d1 = f0.norm().max(1e-8);
    let h0 = 0.01 * d0 / d1;
    let mut f1 = DVector::zeros(sys.dim());
    let y1 = y0 + f0 * h0;
    sys.eval(t0 + h0, &y1, &mut f1);
    let d2 = (&f1 - f0).norm() / h0;
    let h1 = if d2 > 1e-15 {
        (opts.rtol / d2).powf(1.0 / 5.0)
    } else {
        h0 * 10.0
    };
    (100.0 * h0).min(h1).min(1.0).max(1e-10)
}

/// Integrate and return the state at each requested time (strictly increasing,
/// first entry may equal `t0`).
pub fn integrate_at<S: OdeSystem>(
    sys: &S,
    t0: f64,
    y0: DVector<f64>,
    times: &[f64],
    opts: OdeOptions,
) -> Result<(Vec<DVector<f64>>, OdeStats), OdeError> {
    let horizon = times.last().copied().unwrap_or(t0) - t0;
    let mut driver = Dopri5::new(sys, t0, y0, horizon, opts);
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        assert!(t >= t0, "sample times must not precede t0");
        if t > driver.t() {
            driver.advance_to(t)?;
        }
        out.push(driver.y().clone());
    }
    Ok((out, driver.stats()))
}

/// Fixed-step implicit midpoint rule (2nd order, symmetric), solved by
/// fixed-point iteration. Suitable for long-time energy behavior studies.
pub fn implicit_midpoint<S: OdeSystem>(
    sys: &S,
    t0: f64,
    y0: DVector<f64>,
    t_end: f64,
    n_steps: usize,
) -> Result<Vec<(f64, DVector<f64>)>, OdeError> {
    assert!(n_steps > 0 && t_end > t0);
    let h = (t_end - t0) / n_steps as f64;
    let n = sys.dim();
    let mut out = Vec::with_capacity(n_steps + 1);
    let mut t = t0;
    let mut y = y0;
    out.push((t, y.clone()));
    let mut f = DVector::zeros(n);
    for _ in 0..n_steps {
        let tm = t + 0.5 * h;
        sys.eval(t, &y, &mut f);
        let mut ym = &y + &f * (0.5 * h); // explicit predictor
        let mut converged = false;
        for _ in 0..100 {
            sys.eval(tm, &ym, &mut f);
            let ym_next = &y + &f * (0.5 * h);
            let delta = (&ym_next - &ym).norm();
            ym = ym_next;
            if delta < 1e-14 * (1.0 + ym.norm()) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(OdeError::ImplicitDiverged { t });
        }
        sys.eval(tm, &ym, &mut f);
        y += &f * h;
        t += h;
        out.push((t, y.clone()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    struct Decay;
    impl OdeSystem for Decay {
        fn dim(&self) -> usize {
            1
        }
        fn eval(&self, _t: f64, y: &DVector<f64>, dydt: &mut DVector<f64>) {
            dydt[0] = -y[0];
        }
    }

    struct Rotor;
    impl OdeSystem for Rotor {
        fn dim(&self) -> usize {
            2
        }
        fn eval(&self, _t: f64, y: &DVector<f64>, dydt: &mut DVector<f64>) {
            dydt[0] = -y[1];
            dydt[1] = y[0];
        }
    }

    #[test]
    fn exponential_decay_accuracy() {
        let (ys, _) = integrate_at(
            &Decay,
            0.0,
            DVector::from_vec(vec![1.0]),
            &[1.0, 2.0],
            OdeOptions::with_tol(1e-12),
        )
        .unwrap();
        assert_relative_eq!(ys[0][0], (-1.0f64).exp(), epsilon = 1e-11);
        assert_relative_eq!(ys[1][0], (-2.0f64).exp(), epsilon = 1e-11);
    }

    #[test]
    fn rotor_period() {
        let tau = std::f64::consts::TAU;
        let (ys, stats) = integrate_at(
            &Rotor,
            0.0,
            DVector::from_vec(vec![1.0, 0.0]),
            &[tau],
            OdeOptions::with_tol(1e-11),
        )
        .unwrap();
        assert_relative_eq!(ys[0][0], 1.0, epsilon = 1e-9);
        assert_relative_eq!(ys[0][1], 0.0, epsilon = 1e-9);
        assert!(stats.steps > 10);
    }

    #[test]
    fn reversed_round_trip() {
        let y0 = DVector::from_vec(vec![0.3, -0.8]);
        let (fwd, _) = integrate_at(&Rotor, 0.0, y0.clone(), &[5.0], OdeOptions::with_tol(1e-12)).unwrap();
        let rev = Reversed(&Rotor);
        let (back, _) = integrate_at(&rev, -5.0, fwd[0].clone(), &[0.0], OdeOptions::with_tol(1e-12)).unwrap();
        assert!((&back[0] - &y0).norm() < 1e-10);
    }

    #[test]
    fn step_collapse_on_singularity() {
        // y' = y^2 blows up at t = 1; driver must fail rather than hang
        let sys = (1usize, |_t: f64, y: &DVector<f64>, d: &mut DVector<f64>| {
            d[0] = y[0] * y[0];
        });
        let r = integrate_at(&sys, 0.0, DVector::from_vec(vec![1.0]), &[2.0], OdeOptions::with_tol(1e-10));
        assert!(r.is_err());
    }

    #[test]
    fn implicit_midpoint_energy() {
        let sol = implicit_midpoint(&Rotor, 0.0, DVector::from_vec(vec![1.0, 0.0]), 100.0, 20_000).unwrap();
        for (_, y) in sol.iter().step_by(1000) {
            assert_relative_eq!(y.norm_squared(), 1.0, epsilon = 1e-6);
        }
    }
}
