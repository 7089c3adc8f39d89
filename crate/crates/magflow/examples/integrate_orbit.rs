//! Integrate one magnetic geodesic on a bundled model in both formulations
//! and show that they are the same orbit.

use magflow::dynamics::{integrate, to_gauged, to_twisted};
use magflow::lab::{bundled_model, sample_unit_level};
use magflow::Formulation;

fn main() {
    let model = bundled_model("mixed-n2").expect("bundled");
    let x0 = sample_unit_level(&model, Formulation::Twisted, 1, 1).unwrap().remove(0);

    let tw = integrate(&model, Formulation::Twisted, &x0, 20.0, 1e-10, 10).unwrap();
    let ga = integrate(&model, Formulation::Gauged, &to_gauged(&model, &x0), 20.0, 1e-10, 10).unwrap();

    println!("energy drift: twisted {:.3e}, gauged {:.3e}", tw.energy_drift, ga.energy_drift);
    println!("{:>6} {:>24} {:>12}", "t", "q (twisted)", "gauge dev");
    for ((t, a), (_, b)) in tw.samples.iter().zip(&ga.samples) {
        let b_tw = to_twisted(&model, b);
        let dev = (&a.q - &b_tw.q).norm().max((&a.p - &b_tw.p).norm());
        println!("{t:6.1} ({:11.6}, {:11.6}) {dev:12.3e}", a.q[0], a.q[1]);
    }

    let mut csv = Vec::new();
    tw.write_csv(&model, &mut csv).unwrap();
    println!("\nCSV head:\n{}", String::from_utf8(csv).unwrap().lines().take(3).collect::<Vec<_>>().join("\n"));
}
