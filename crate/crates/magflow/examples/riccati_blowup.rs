//! Propagate the matrix Riccati equation along a constant-field orbit and
//! watch it blow up exactly at the first conjugate time.

use magflow::lab::{bundled_model, sample_unit_level};
use magflow::ode::OdeOptions;
use magflow::variational::{lagrangian_residual, propagate_riccati, propagate_vertical};
use magflow::Formulation;
use std::f64::consts::TAU;

fn main() {
    let model = bundled_model("flat-b1").expect("bundled");
    let x0 = sample_unit_level(&model, Formulation::Gauged, 7, 1).unwrap().remove(0);

    // start from the vertical-limit matrix A = P J^{-1} shortly after t = 0
    let t0 = 1e-3;
    let frame = propagate_vertical(&model, &x0, t0, 1, OdeOptions::with_tol(1e-12)).unwrap();
    let end = frame.last().unwrap();
    let a_raw = end.j.transpose().lu().solve(&end.p.transpose()).unwrap().transpose();
    // symmetrize onto the Lagrangian constraint A^T - A = -Gamma
    let gamma = model.gauge().gamma();
    let a0 = (&a_raw + a_raw.transpose()) * 0.5 + gamma * 0.5;
    println!("initial defect ||A0^T - A0 + Gamma|| = {:.3e}", lagrangian_residual(&a0, gamma));

    let run = propagate_riccati(&model, &a0, &end.x, TAU, 40, OdeOptions::with_tol(1e-12)).unwrap();
    println!("{:>8} {:>14} {:>14}", "t", "||A||", "defect");
    for s in run.samples.iter().step_by(5) {
        println!("{:8.3} {:14.4e} {:14.3e}", t0 + s.t, s.a.norm(), lagrangian_residual(&s.a, gamma));
    }
    let t_b = t0 + run.blow_up.expect("blow-up");
    println!("\nblow-up at t = {t_b:.9}  (2 pi = {:.9})", TAU);
    println!("max Lagrangian defect along the run: {:.3e}", run.max_lagrangian_residual);
}
