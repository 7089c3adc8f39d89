//! Split a magnetic form into its constant part plus an exact part with a
//! zero-mean potential, and verify the reconstruction.

use magflow::lab::{bundled_model, decompose_report};

fn main() {
    let model = bundled_model("flat-exact-n3").expect("bundled");
    let rep = decompose_report(&model);

    println!("Gamma (constant part):");
    for row in &rep.gamma {
        println!("  {row:?}");
    }
    for (i, comp) in rep.alpha.iter().enumerate() {
        println!("alpha_{}:", i + 1);
        for m in &comp.modes {
            println!("  k = {:?}: a = {}, b = {}", m.k, m.a, m.b);
        }
    }
    println!("reconstruction residual: {:.3e}", rep.reconstruction_residual);
}
