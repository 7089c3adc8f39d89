//! Experiment harness: model files, configs, seeded sampling, and the
//! deterministic runners behind the command-line tool.
//!
//! Everything here is reproducible by construction: inputs are plain TOML,
//! random draws come from a seeded low-discrepancy sequence, quadrature and
//! reductions run in a fixed order, and report files carry no timestamps
//! (wall-clock times live only in the `runs.jsonl` index).

mod experiments;
mod io;
mod sampling;

pub use experiments::{
    conjugate_scan_csv, decompose_report, green_limit_report, run_conjugate_demo, run_experiment,
    run_validate, sigma_report_for, CheckResult, DemoOrbit, DemoReport, ExperimentKind,
    GreenReport, RunSummary, ValidationReport,
};
pub use io::{
    append_run_record, load_config, load_model, save_model, write_atomic, BetaComponentSpec,
    ExperimentConfig, ModeSpec, ModelSpec, PolySpec, RunRecord,
};
pub use sampling::{sample_unit_level, unit_sphere_point, HaltonSampler};

use crate::dynamics::DynamicsError;
use crate::fourier::TrigPoly;
use crate::model::{ConformalFactor, MagneticModel, ModelError, TwoForm};
use crate::variational::VariationalError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config: {0}")]
    Schema(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Variational(#[from] VariationalError),
}

/// Names of the models shipped with the crate (see [`bundled_model`]).
pub fn bundled_model_names() -> &'static [&'static str] {
    &[
        "flat-free-n2",
        "flat-b05",
        "flat-b1",
        "flat-b2",
        "flat-exact-n3",
        "conformal-n3-eps01",
        "conformal-n3-eps03",
        "mixed-n2",
        "mixed-n3",
    ]
}

/// Construct a bundled model by name.
///
/// - `flat-free-n2`: flat metric, no magnetic field (control case).
/// - `flat-b05` / `flat-b1` / `flat-b2`: flat metric on `T^2`, constant field
///   `B in {0.5, 1, 2}`.
/// - `flat-exact-n3`: flat metric on `T^3`, field with a nonzero constant part
///   and a nontrivial exact part (so `alpha` has curvature).
/// - `conformal-n3-eps01` / `-eps03`: `lambda = 1 + eps cos(q1)` on `T^3`,
///   no field — the closed-form `sigma` family.
/// - `mixed-n2` / `mixed-n3`: nonflat metric and position-dependent field.
pub fn bundled_model(name: &str) -> Option<MagneticModel> {
    let flat = |n: usize| ConformalFactor::new(TrigPoly::constant(n, 1.0)).unwrap();
    let eps_lambda = |n: usize, eps: f64| {
        let mut k = vec![0i64; n];
        k[0] = 1;
        ConformalFactor::new(TrigPoly::constant(n, 1.0).add(&TrigPoly::single(n, &k, eps, 0.0)))
            .unwrap()
    };
    let model = match name {
        "flat-free-n2" => MagneticModel::new(flat(2), TwoForm::zero(2)),
        "flat-b05" => MagneticModel::new(flat(2), TwoForm::constant_b(2, 0.5)),
        "flat-b1" => MagneticModel::new(flat(2), TwoForm::constant_b(2, 1.0)),
        "flat-b2" => MagneticModel::new(flat(2), TwoForm::constant_b(2, 2.0)),
        "flat-exact-n3" => {
            let mut beta = TwoForm::constant_b(3, 0.6);
            beta.set(1, 2, TrigPoly::single(3, &[0, 0, 1], -0.4, 0.0));
            MagneticModel::new(flat(3), beta)
        }
        "conformal-n3-eps01" => MagneticModel::new(eps_lambda(3, 0.1), TwoForm::zero(3)),
        "conformal-n3-eps03" => MagneticModel::new(eps_lambda(3, 0.3), TwoForm::zero(3)),
        "mixed-n2" => {
            let lam = ConformalFactor::new(
                TrigPoly::constant(2, 1.0)
                    .add(&TrigPoly::single(2, &[1, 0], 0.2, 0.0))
                    .add(&TrigPoly::single(2, &[1, 1], 0.0, 0.1)),
            )
            .unwrap();
            // any beta_12(q) is closed on T^2
            let mut beta = TwoForm::constant_b(2, 0.8);
            beta.set(0, 1, beta.component(0, 1).add(&TrigPoly::single(2, &[0, 1], 0.3, 0.0)));
            MagneticModel::new(lam, beta)
        }
        "mixed-n3" => {
            let mut beta = TwoForm::constant_b(3, 0.8);
            beta.set(1, 2, TrigPoly::single(3, &[0, 0, 1], -0.5, 0.0));
            MagneticModel::new(eps_lambda(3, 0.15), beta)
        }
        _ => return None,
    };
    Some(model.expect("bundled models are valid by construction"))
}
