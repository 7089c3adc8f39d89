//! Backward limit of push-forward vertical frames: on the field-free flat
//! torus `A_T = I / T`, so doubling the horizon halves the norm; on the
//! constant-field model the frame is singular exactly at multiples of
//! `2 pi / B` and those horizons are flagged.

use magflow::lab::{bundled_model, green_limit_report, sample_unit_level};
use magflow::Formulation;
use std::f64::consts::TAU;

fn main() {
    let free = bundled_model("flat-free-n2").expect("bundled");
    let x = sample_unit_level(&free, Formulation::Gauged, 5, 1).unwrap().remove(0);
    let rep = green_limit_report(&free, &x, &[10.0, 20.0, 40.0], 1e-10).unwrap();
    println!("field-free: norms {:?}", rep.norms);
    println!("            halving ratios {:?}", rep.norm_ratios);
    println!("            Cauchy increments {:?}", rep.increments);

    let b1 = bundled_model("flat-b1").expect("bundled");
    let x = sample_unit_level(&b1, Formulation::Gauged, 5, 1).unwrap().remove(0);
    let rep = green_limit_report(&b1, &x, &[3.0, TAU, 7.0, 2.0 * TAU], 1e-10).unwrap();
    println!("\nB = 1: sigma_min(J) per horizon {:?}", rep.sigma_min_j);
    println!("        singular frames flagged: {}", rep.singular_count);
}
