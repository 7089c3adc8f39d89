//! Scan seeded orbits of the constant-field model for first conjugate points
//! and compare against the analytic value `2 pi / B`.

use magflow::lab::{bundled_model, conjugate_scan_csv, run_conjugate_demo};
use std::f64::consts::TAU;

fn main() {
    let model = bundled_model("flat-b1").expect("bundled");
    let rep = run_conjugate_demo(&model, 42, 20, 1.5 * TAU, 1e-9).unwrap();

    println!(
        "{} orbits, {} conjugate points found, expected t* = {:.6}",
        rep.n_orbits,
        rep.n_found,
        rep.expected.unwrap()
    );
    println!(
        "errors: max {:.3e}, median {:.3e}; field-free control clean: {}",
        rep.max_abs_error.unwrap(),
        rep.median_abs_error.unwrap(),
        rep.control_clean
    );

    let mut csv = Vec::new();
    conjugate_scan_csv(&model, 42, 5, 1.5 * TAU, 1e-9, &mut csv).unwrap();
    println!("\nscan CSV:\n{}", String::from_utf8(csv).unwrap());
}
