//! The runners: invariant validation, conjugate-point demos and scans, sigma
//! reports, stable-field limits, and field decomposition — each producing a
//! deterministic artifact.

use super::io::{append_run_record, write_atomic, ExperimentConfig, PolySpec, RunRecord};
use super::sampling::sample_unit_level;
use super::LabError;
use crate::averaging::{self, QuadratureGrid};
use crate::dynamics::{fmt17, integrate, to_gauged, to_twisted, PhasePoint};
use crate::model::{Formulation, MagneticModel};
use crate::ode::OdeOptions;
use crate::variational::{
    self, first_conjugate_time, green_limit, propagate_riccati,
    trace_inequality_check, DetectorStatus,
};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::TAU;
use std::io::Write;
use std::path::{Path, PathBuf};

/// One named invariant check with its measured value.
#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

fn check(name: &str, value: f64, threshold: f64) -> CheckResult {
    CheckResult { name: name.to_string(), value, threshold, pass: value <= threshold }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub model_hash: String,
    pub checks: Vec<CheckResult>,
    pub pass: bool,
}

impl ValidationReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in &self.checks {
            s.push_str(&format!(
                "{:<28} {:>12.3e}  (<= {:.1e})  {}\n",
                c.name,
                c.value,
                c.threshold,
                if c.pass { "ok" } else { "FAIL" }
            ));
        }
        s.push_str(if self.pass { "validation: PASS\n" } else { "validation: FAIL\n" });
        s
    }
}

/// Run the full invariant suite on one model: structural residuals, flow
/// invariants, gauge equivalence, fiber-average identities, the Riccati trace
/// inequality, and output determinism.
pub fn run_validate(model: &MagneticModel, cfg: &ExperimentConfig) -> Result<ValidationReport, LabError> {
    let n = model.dim();
    let fd_grid = (4 * model.beta().max_wavenumber().max(1) + 4) as usize;
    let mut checks = Vec::new();

    checks.push(check("beta-closedness", model.beta().closedness_residual(fd_grid), 1e-10));
    checks.push(check(
        "gauge-reconstruction",
        model.gauge().reconstruction_residual(model.beta(), fd_grid),
        1e-10,
    ));
    // positivity: pass iff the certified lower bound is strictly positive
    let lb = model.lambda().lower_bound();
    checks.push(CheckResult {
        name: "lambda-positivity".into(),
        value: lb,
        threshold: 0.0,
        pass: lb > 0.0,
    });

    let horizon = cfg.horizon.min(50.0);
    let x_tw = sample_unit_level(model, Formulation::Twisted, cfg.seed, 1)?.remove(0);
    let traj_tw = integrate(model, Formulation::Twisted, &x_tw, horizon, cfg.tol, 200)?;
    checks.push(check("energy-drift", traj_tw.energy_drift, cfg.tol.max(1e-12) * 10.0));

    // the same orbit in the gauged chart must agree after mapping back
    let traj_ga = integrate(model, Formulation::Gauged, &to_gauged(model, &x_tw), horizon, cfg.tol, 200)?;
    let mut gauge_dev = 0.0f64;
    for ((_, a), (_, b)) in traj_tw.samples.iter().zip(&traj_ga.samples) {
        let b_tw = to_twisted(model, b);
        gauge_dev = gauge_dev.max((&a.q - &b_tw.q).norm()).max((&a.p - &b_tw.p).norm());
    }
    checks.push(check("gauge-equivalence", gauge_dev, (100.0 * cfg.tol).max(1e-9)));

    // sphere-averaged equality of the two Schur traces
    let qgrid = QuadratureGrid::new(n, 8, 8);
    checks.push(check("odd-integrand", averaging::odd_integrand_check(model, &qgrid), 1e-12));
    let s_tw = averaging::sigma_direct(model, Formulation::Twisted, &qgrid);
    let s_ga = averaging::sigma_direct(model, Formulation::Gauged, &qgrid);
    checks.push(check("sigma-gauge-invariance", (s_tw.value - s_ga.value).abs(), 1e-10));

    // Riccati propagation from a Lagrangian initial matrix
    let gamma = model.gauge().gamma();
    let a0 = DMatrix::identity(n, n) + gamma * 0.5;
    let x_ga = sample_unit_level(model, Formulation::Gauged, cfg.seed, 1)?.remove(0);
    let run = propagate_riccati(model, &a0, &x_ga, 5.0, 50, OdeOptions::with_tol(1e-11));
    match run {
        Ok(run) => {
            let worst = if run.blow_up.is_some() { 0.0 } else { trace_inequality_check(model, &run) };
            checks.push(check("trace-inequality", worst.max(0.0), 1e-8));
            checks.push(check("lagrangian-residual", run.max_lagrangian_residual, 1e-8));
        }
        Err(e) => return Err(e.into()),
    }

    // byte-identical re-run of the trajectory artifact
    let mut csv1 = Vec::new();
    let mut csv2 = Vec::new();
    traj_tw.write_csv(model, &mut csv1)?;
    integrate(model, Formulation::Twisted, &x_tw, horizon, cfg.tol, 200)?.write_csv(model, &mut csv2)?;
    checks.push(CheckResult {
        name: "determinism".into(),
        value: if csv1 == csv2 { 0.0 } else { 1.0 },
        threshold: 0.0,
        pass: csv1 == csv2,
    });

    let pass = checks.iter().all(|c| c.pass);
    Ok(ValidationReport { model_hash: model.fingerprint(), checks, pass })
}

/// Analytic first conjugate time, where one is known: flat metric with a
/// constant two-dimensional field `B` gives `2 pi / (lambda B)`.
pub fn expected_conjugate_time(model: &MagneticModel) -> Option<f64> {
    if model.dim() != 2 {
        return None;
    }
    let lam = model.lambda().poly();
    let beta = model.beta().component(0, 1);
    let constant =
        |p: &crate::fourier::TrigPoly| p.modes().iter().all(|m| m.k.iter().all(|&k| k == 0));
    if constant(lam) && constant(beta) && beta.mean() != 0.0 {
        Some(TAU / (lam.mean() * beta.mean().abs()))
    } else {
        None
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DemoOrbit {
    pub id: usize,
    pub q0: Vec<f64>,
    pub dir: Vec<f64>,
    pub t_conj: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct DemoReport {
    pub model_hash: String,
    pub n_orbits: usize,
    pub n_found: usize,
    pub n_ambiguous: usize,
    pub expected: Option<f64>,
    pub max_abs_error: Option<f64>,
    pub median_abs_error: Option<f64>,
    /// Control arm: a field-free flat model scanned over the same horizon
    /// must produce no conjugate points.
    pub control_clean: bool,
    pub orbits: Vec<DemoOrbit>,
}

fn scan_orbits(
    model: &MagneticModel,
    seed: u64,
    count: usize,
    t_max: f64,
    t_tol: f64,
) -> Result<Vec<DemoOrbit>, LabError> {
    let ics = sample_unit_level(model, Formulation::Gauged, seed, count)?;
    let lam = |q: &[f64]| model.lambda().eval(q);
    let results: Result<Vec<_>, variational::VariationalError> = ics
        .par_iter()
        .enumerate()
        .map(|(id, x)| {
            let rep = first_conjugate_time(model, x, t_max, t_tol)?;
            let q = x.q_wrapped();
            // unit direction on the sphere that generated this momentum
            let kin = &x.p - model.gauge().alpha().eval(q.as_slice());
            let dir = kin * lam(q.as_slice()).sqrt();
            let (t_conj, status) = match rep.status {
                DetectorStatus::Found { t_star } => (Some(t_star), "found"),
                DetectorStatus::NoneFound { .. } => (None, "none"),
                DetectorStatus::Ambiguous { t_dip, .. } => (Some(t_dip), "ambiguous"),
            };
            Ok(DemoOrbit {
                id,
                q0: q.iter().copied().collect(),
                dir: dir.iter().copied().collect(),
                t_conj,
                status: status.to_string(),
            })
        })
        .collect();
    Ok(results?)
}

/// Seeded multi-orbit conjugate-point demonstration with a flat control arm.
pub fn run_conjugate_demo(
    model: &MagneticModel,
    seed: u64,
    count: usize,
    t_max: f64,
    t_tol: f64,
) -> Result<DemoReport, LabError> {
    let orbits = scan_orbits(model, seed, count, t_max, t_tol)?;
    let expected = expected_conjugate_time(model);
    let n_found = orbits.iter().filter(|o| o.status == "found").count();
    let n_ambiguous = orbits.iter().filter(|o| o.status == "ambiguous").count();
    let (max_err, median_err) = match expected {
        Some(t_star) => {
            let mut errs: Vec<f64> = orbits
                .iter()
                .filter(|o| o.status == "found")
                .map(|o| (o.t_conj.unwrap() - t_star).abs())
                .collect();
            errs.sort_by(f64::total_cmp);
            if errs.is_empty() {
                (None, None)
            } else {
                (Some(errs[errs.len() - 1]), Some(errs[errs.len() / 2]))
            }
        }
        None => (None, None),
    };

    let control = super::bundled_model("flat-free-n2").expect("control model exists");
    let control_orbits =
        scan_orbits(&control, seed, count.min(5), t_max.min(20.0), t_tol)?;
    let control_clean = control_orbits.iter().all(|o| o.status == "none");

    Ok(DemoReport {
        model_hash: model.fingerprint(),
        n_orbits: orbits.len(),
        n_found,
        n_ambiguous,
        expected,
        max_abs_error: max_err,
        median_abs_error: median_err,
        control_clean,
        orbits,
    })
}

/// Conjugate-point scan over seeded initial conditions, written as CSV with
/// header `id,q0_1..q0_n,dir_1..dir_n,t_conj,status` (`t_conj` empty when no
/// point was certified).
pub fn conjugate_scan_csv<W: Write>(
    model: &MagneticModel,
    seed: u64,
    count: usize,
    t_max: f64,
    t_tol: f64,
    mut w: W,
) -> Result<Vec<DemoOrbit>, LabError> {
    let orbits = scan_orbits(model, seed, count, t_max, t_tol)?;
    let n = model.dim();
    let mut header = String::from("id");
    for i in 1..=n {
        header.push_str(&format!(",q0_{i}"));
    }
    for i in 1..=n {
        header.push_str(&format!(",dir_{i}"));
    }
    header.push_str(",t_conj,status");
    writeln!(w, "{header}").map_err(LabError::Io)?;
    for o in &orbits {
        let mut line = o.id.to_string();
        for v in o.q0.iter().chain(o.dir.iter()) {
            line.push(',');
            line.push_str(&fmt17(*v));
        }
        line.push(',');
        if let Some(t) = o.t_conj {
            line.push_str(&fmt17(t));
        }
        line.push(',');
        line.push_str(&o.status);
        writeln!(w, "{line}").map_err(LabError::Io)?;
    }
    Ok(orbits)
}

/// Backward-limit diagnostics of the stable Lagrangian field at one point.
#[derive(Debug, Clone, Serialize)]
pub struct GreenReport {
    pub model_hash: String,
    pub times: Vec<f64>,
    /// Frobenius norm of `A_T`, `null` where the frame was singular.
    pub norms: Vec<Option<f64>>,
    pub sigma_min_j: Vec<f64>,
    pub singular_count: usize,
    /// `||A_{T_{k+1}} - A_{T_k}||` over consecutive regular samples.
    pub increments: Vec<f64>,
    /// `norm ratio` over consecutive regular samples.
    pub norm_ratios: Vec<f64>,
}

pub fn green_limit_report(
    model: &MagneticModel,
    x: &PhasePoint,
    times: &[f64],
    tol: f64,
) -> Result<GreenReport, LabError> {
    let res = green_limit(model, x, times, OdeOptions::with_tol(tol.max(1e-12)))?;
    let norms: Vec<Option<f64>> = res.samples.iter().map(|s| s.a.as_ref().map(|a| a.norm())).collect();
    let ratios = norms
        .windows(2)
        .filter_map(|w| match (w[0], w[1]) {
            (Some(a), Some(b)) if a > 0.0 => Some(b / a),
            _ => None,
        })
        .collect();
    Ok(GreenReport {
        model_hash: model.fingerprint(),
        times: times.to_vec(),
        singular_count: norms.iter().filter(|n| n.is_none()).count(),
        sigma_min_j: res.samples.iter().map(|s| s.sigma_min_j).collect(),
        increments: res.cauchy_increments,
        norm_ratios: ratios,
        norms,
    })
}

/// Gauge decomposition of the magnetic form: constant part, potential of the
/// exact part, and the reconstruction residual.
#[derive(Debug, Clone, Serialize)]
pub struct DecomposeReport {
    pub model_hash: String,
    pub dim: usize,
    pub gamma: Vec<Vec<f64>>,
    pub alpha: Vec<PolySpec>,
    pub reconstruction_residual: f64,
}

pub fn decompose_report(model: &MagneticModel) -> DecomposeReport {
    let n = model.dim();
    let gauge = model.gauge();
    let grid = (4 * model.beta().max_wavenumber().max(1) + 4) as usize;
    DecomposeReport {
        model_hash: model.fingerprint(),
        dim: n,
        gamma: (0..n)
            .map(|i| (0..n).map(|j| gauge.gamma()[(i, j)]).collect())
            .collect(),
        alpha: gauge
            .alpha()
            .components()
            .iter()
            .map(|c| PolySpec {
                modes: c
                    .modes()
                    .iter()
                    .map(|m| super::io::ModeSpec { k: m.k.clone(), a: m.a, b: m.b })
                    .collect(),
            })
            .collect(),
        reconstruction_residual: gauge.reconstruction_residual(model.beta(), grid),
    }
}

/// Sigma report with the grid resolved from the config.
pub fn sigma_report_for(model: &MagneticModel, cfg: &ExperimentConfig) -> averaging::SigmaReport {
    let grid = if cfg.grid == 0 {
        let mut g = QuadratureGrid::default_for(model);
        g.sphere = averaging::SphereRule::new(model.dim(), cfg.sphere);
        g
    } else {
        QuadratureGrid::new(model.dim(), cfg.grid, cfg.sphere)
    };
    averaging::sigma_report(model, &grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Validate,
    Integrate,
    ConjugateScan,
    Sigma,
    GreenLimit,
    Decompose,
}

impl ExperimentKind {
    fn name(self) -> &'static str {
        match self {
            ExperimentKind::Validate => "validate",
            ExperimentKind::Integrate => "integrate",
            ExperimentKind::ConjugateScan => "conjugate-scan",
            ExperimentKind::Sigma => "sigma",
            ExperimentKind::GreenLimit => "green-limit",
            ExperimentKind::Decompose => "decompose",
        }
    }
}

/// Outcome handed to the command line: `pass` drives the exit code, `message`
/// is printed (the artifact itself when no output path was given).
#[derive(Debug)]
pub struct RunSummary {
    pub pass: bool,
    pub message: String,
    pub output: Option<PathBuf>,
}

fn initial_condition(
    model: &MagneticModel,
    cfg: &ExperimentConfig,
    which: Formulation,
) -> Result<PhasePoint, LabError> {
    match (&cfg.q0, &cfg.p0) {
        (Some(q), Some(p)) => {
            if q.len() != model.dim() || p.len() != model.dim() {
                return Err(LabError::Schema("q0/p0 length must match the model dimension".into()));
            }
            Ok(crate::dynamics::normalize_energy(
                model,
                which,
                &PhasePoint::new(DVector::from_column_slice(q), DVector::from_column_slice(p)),
            )?)
        }
        (None, None) => Ok(sample_unit_level(model, which, cfg.seed, 1)?.remove(0)),
        _ => Err(LabError::Schema("q0 and p0 must be given together".into())),
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

/// Dispatch one experiment; writes the artifact atomically when `out` is set
/// and appends a line to `runs.jsonl` beside it.
pub fn run_experiment(
    kind: ExperimentKind,
    cfg: &ExperimentConfig,
    out: Option<&Path>,
) -> Result<RunSummary, LabError> {
    cfg.validate()?;
    let model = cfg.resolve_model()?;
    let (artifact, pass, summary_line, record_summary) = match kind {
        ExperimentKind::Validate => {
            let rep = run_validate(&model, cfg)?;
            let pass = rep.pass;
            let msg = rep.render();
            (to_json(&rep), pass, msg, serde_json::json!({ "pass": pass }))
        }
        ExperimentKind::Integrate => {
            let which = cfg.resolve_formulation();
            let x0 = initial_condition(&model, cfg, which)?;
            let traj = integrate(&model, which, &x0, cfg.horizon, cfg.tol, cfg.samples)?;
            let mut csv = Vec::new();
            traj.write_csv(&model, &mut csv)?;
            let msg = format!(
                "integrated T = {} ({} samples), energy drift {:.3e}",
                cfg.horizon,
                traj.samples.len(),
                traj.energy_drift
            );
            (
                String::from_utf8(csv).expect("csv is utf-8"),
                true,
                msg,
                serde_json::json!({ "energy_drift": traj.energy_drift }),
            )
        }
        ExperimentKind::ConjugateScan => {
            let mut csv = Vec::new();
            let orbits =
                conjugate_scan_csv(&model, cfg.seed, cfg.samples, cfg.horizon, 1e-9, &mut csv)?;
            let found = orbits.iter().filter(|o| o.status == "found").count();
            let msg = format!(
                "scanned {} orbits to T = {}: {} with conjugate points, {} ambiguous",
                orbits.len(),
                cfg.horizon,
                found,
                orbits.iter().filter(|o| o.status == "ambiguous").count()
            );
            (
                String::from_utf8(csv).expect("csv is utf-8"),
                true,
                msg,
                serde_json::json!({ "orbits": orbits.len(), "found": found }),
            )
        }
        ExperimentKind::Sigma => {
            let rep = sigma_report_for(&model, cfg);
            let msg = format!(
                "sigma(H) = {:.12e}, sigma(H-gauged) = {:.12e}, closed form {:.12e}",
                rep.sigma_twisted.value, rep.sigma_gauged.value, rep.sigma_closed_form.value
            );
            let s = serde_json::json!({ "sigma": rep.sigma_twisted.value });
            (to_json(&rep), true, msg, s)
        }
        ExperimentKind::GreenLimit => {
            let x = initial_condition(&model, cfg, Formulation::Gauged)?;
            let rep = green_limit_report(&model, &x, &cfg.times, cfg.tol)?;
            let msg = format!(
                "backward limit over T = {:?}: {} singular frames, increments {:?}",
                rep.times, rep.singular_count, rep.increments
            );
            let s = serde_json::json!({ "singular": rep.singular_count });
            (to_json(&rep), true, msg, s)
        }
        ExperimentKind::Decompose => {
            let rep = decompose_report(&model);
            let msg = format!(
                "decomposed beta: reconstruction residual {:.3e}",
                rep.reconstruction_residual
            );
            let s = serde_json::json!({ "residual": rep.reconstruction_residual });
            (to_json(&rep), true, msg, s)
        }
    };

    let message = if out.is_some() { summary_line } else { artifact.clone() };
    if let Some(path) = out {
        write_atomic(path, artifact.as_bytes())?;
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let record = RunRecord {
            schema_version: 1,
            timestamp_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            kind: kind.name().to_string(),
            seed: cfg.seed,
            model_hash: model.fingerprint(),
            output: Some(path.display().to_string()),
            summary: record_summary,
        };
        append_run_record(dir, &record)?;
    }
    Ok(RunSummary { pass, message, output: out.map(Path::to_path_buf) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn validate_passes_on_bundled_models() {
        for name in ["flat-b1", "mixed-n2", "flat-exact-n3"] {
            let model = super::super::bundled_model(name).unwrap();
            let cfg = ExperimentConfig { horizon: 5.0, ..Default::default() };
            let rep = run_validate(&model, &cfg).unwrap();
            assert!(rep.pass, "{name}:\n{}", rep.render());
        }
    }

    #[test]
    fn expected_time_only_for_constant_fields() {
        let b1 = super::super::bundled_model("flat-b2").unwrap();
        assert!((expected_conjugate_time(&b1).unwrap() - PI).abs() < 1e-15);
        let mixed = super::super::bundled_model("mixed-n2").unwrap();
        assert!(expected_conjugate_time(&mixed).is_none());
        let free = super::super::bundled_model("flat-free-n2").unwrap();
        assert!(expected_conjugate_time(&free).is_none());
    }

    #[test]
    fn demo_on_constant_field() {
        let model = super::super::bundled_model("flat-b1").unwrap();
        let rep = run_conjugate_demo(&model, 1, 10, 1.5 * TAU, 1e-9).unwrap();
        assert_eq!(rep.n_found, 10);
        assert!(rep.control_clean);
        assert!(rep.max_abs_error.unwrap() < 1e-6, "{:?}", rep.max_abs_error);
    }

    #[test]
    fn scan_csv_shape() {
        let model = super::super::bundled_model("flat-b1").unwrap();
        let mut csv = Vec::new();
        conjugate_scan_csv(&model, 3, 4, 8.0, 1e-9, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "id,q0_1,q0_2,dir_1,dir_2,t_conj,status");
        assert_eq!(lines.count(), 4);
        assert!(text.contains(",found"));
    }

    #[test]
    fn experiment_writes_artifact_and_index() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("traj.csv");
        let cfg = ExperimentConfig {
            model: Some("flat-b1".into()),
            horizon: 2.0,
            samples: 10,
            ..Default::default()
        };
        let sum = run_experiment(ExperimentKind::Integrate, &cfg, Some(&out)).unwrap();
        assert!(sum.pass);
        let text = std::fs::read_to_string(&out).unwrap();
        assert!(text.starts_with("t,q1,q2,p1,p2,H"));
        assert_eq!(text.lines().count(), 12);
        let index = std::fs::read_to_string(dir.path().join("runs.jsonl")).unwrap();
        let rec: serde_json::Value = serde_json::from_str(index.lines().next().unwrap()).unwrap();
        assert_eq!(rec["kind"], "integrate");
        // artifact is byte-identical across runs
        let out2 = dir.path().join("traj2.csv");
        run_experiment(ExperimentKind::Integrate, &cfg, Some(&out2)).unwrap();
        assert_eq!(text, std::fs::read_to_string(&out2).unwrap());
    }

    #[test]
    fn experiment_without_out_returns_artifact() {
        let cfg = ExperimentConfig { model: Some("flat-exact-n3".into()), ..Default::default() };
        let sum = run_experiment(ExperimentKind::Decompose, &cfg, None).unwrap();
        assert!(sum.message.contains("reconstruction_residual"));
    }
}
