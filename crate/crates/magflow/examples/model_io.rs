//! Export every bundled model to TOML and verify the lossless round trip.
//! Pass a directory to (re)generate the files shipped in `models/`.

use magflow::lab::{bundled_model, bundled_model_names, load_model, save_model};
use std::path::PathBuf;

fn main() {
    let dir: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "models".into()).into();
    std::fs::create_dir_all(&dir).unwrap();
    for name in bundled_model_names() {
        let model = bundled_model(name).unwrap();
        let path = dir.join(format!("{name}.toml"));
        save_model(&model, &path).unwrap();
        let back = load_model(&path).unwrap();
        assert_eq!(model.fingerprint(), back.fingerprint(), "round trip must be exact");
        println!("{} -> {}", name, path.display());
    }
}
