//! Acceptance gate: one test per criterion, each printing a single
//! `[pass]`/`[FAIL]` line with the measured figures.

use magflow::averaging::{self, QuadratureGrid};
use magflow::dynamics::{integrate, to_gauged, to_twisted};
use magflow::lab::{
    bundled_model, green_limit_report, run_conjugate_demo, run_experiment, sample_unit_level,
    ExperimentConfig, ExperimentKind,
};
use magflow::model::Formulation;
use magflow::ode::OdeOptions;
use magflow::variational::{
    first_conjugate_time, propagate_riccati, propagate_vertical, trace_inequality_check,
    DetectorStatus,
};
use nalgebra::{DMatrix, DVector};
use std::f64::consts::TAU;
use std::time::Instant;

fn report(id: u32, name: &str, pass: bool, detail: String) {
    println!("criterion {id:02} {name:<34} [{}]  {detail}", if pass { "pass" } else { "FAIL" });
    assert!(pass, "criterion {id}: {detail}");
}

#[test]
fn criterion_01_constant_field_conjugate_times() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut found = 0usize;
    let mut total = 0usize;
    for (name, b) in [("flat-b05", 0.5), ("flat-b1", 1.0), ("flat-b2", 2.0)] {
        let model = bundled_model(name).unwrap();
        let rep = run_conjugate_demo(&model, 20_000 + b as u64, 100, 1.5 * TAU / b, 1e-9).unwrap();
        total += rep.n_orbits;
        found += rep.n_found;
        worst = worst.max(rep.max_abs_error.unwrap_or(f64::INFINITY));
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = found == total && worst < 1e-6 && secs < 30.0;
    report(
        1,
        "constant-field conjugate times",
        pass,
        format!("{found}/{total} found, max |t* - 2pi/B| = {worst:.2e}, {secs:.1}s"),
    );
}

#[test]
fn criterion_02_flat_control_no_conjugate_points() {
    let model = bundled_model("flat-free-n2").unwrap();
    let x0 = sample_unit_level(&model, Formulation::Gauged, 21, 1).unwrap().remove(0);
    let rep = first_conjugate_time(&model, &x0, 100.0, 1e-9).unwrap();
    let clean = matches!(rep.status, DetectorStatus::NoneFound { .. });

    let frames = propagate_vertical(&model, &x0, 100.0, 200, OdeOptions::with_tol(1e-12)).unwrap();
    let det_err = frames
        .iter()
        .map(|s| (s.det_j - s.t * s.t).abs() / (s.t * s.t).max(1.0))
        .fold(0.0f64, f64::max);
    let pass = clean && det_err < 1e-8;
    report(
        2,
        "field-free flat control",
        pass,
        format!("no conjugate points: {clean}, max |det J - t^2| (rel) = {det_err:.2e}"),
    );
}

#[test]
fn criterion_03_sigma_gauge_invariance() {
    let models = ["flat-b1", "flat-exact-n3", "mixed-n2", "mixed-n3", "conformal-n3-eps01"];
    let mut worst_gap = 0.0f64;
    let mut worst_odd = 0.0f64;
    for name in models {
        let model = bundled_model(name).unwrap();
        let grid = QuadratureGrid::new(model.dim(), 8, 8);
        let tw = averaging::sigma_direct(&model, Formulation::Twisted, &grid);
        let ga = averaging::sigma_direct(&model, Formulation::Gauged, &grid);
        worst_gap = worst_gap.max((tw.value - ga.value).abs());
        worst_odd = worst_odd.max(averaging::odd_integrand_check(&model, &grid));
    }
    let pass = worst_gap < 1e-8 && worst_odd < 1e-12;
    report(
        3,
        "sigma gauge invariance (5 models)",
        pass,
        format!("max |sigma(Ht) - sigma(H)| = {worst_gap:.2e}, max odd integrand = {worst_odd:.2e}"),
    );
}

#[test]
fn criterion_04_sigma_closed_form() {
    let mut worst_rel = 0.0f64;
    let mut positive = true;
    for name in ["conformal-n3-eps01", "conformal-n3-eps03"] {
        let model = bundled_model(name).unwrap();
        let grid = QuadratureGrid::new(3, 8, 8);
        let direct = averaging::sigma_direct(&model, Formulation::Twisted, &grid);
        let closed = averaging::sigma_closed_form(&model, &grid);
        worst_rel = worst_rel.max((direct.value - closed.value).abs() / closed.value.abs());
        positive &= direct.value > 0.0;
    }
    let n2 = bundled_model("mixed-n2").unwrap();
    let s2 = averaging::sigma_direct(&n2, Formulation::Twisted, &QuadratureGrid::new(2, 8, 8));
    let pass = worst_rel < 1e-6 && positive && s2.value.abs() < 1e-10;
    report(
        4,
        "sigma closed form",
        pass,
        format!(
            "n=3 rel err = {worst_rel:.2e}, positive: {positive}, n=2 |sigma| = {:.2e}",
            s2.value.abs()
        ),
    );
}

#[test]
fn criterion_05_riccati_blowup_at_conjugate_time() {
    let model = bundled_model("flat-b1").unwrap();
    let x0 = sample_unit_level(&model, Formulation::Gauged, 5, 1).unwrap().remove(0);
    // vertical-limit initial matrix from the frame at t0
    let t0 = 1e-3;
    let frames = propagate_vertical(&model, &x0, t0, 1, OdeOptions::with_tol(1e-12)).unwrap();
    let end = frames.last().unwrap();
    let a_raw = end.j.transpose().lu().solve(&end.p.transpose()).unwrap().transpose();
    let gamma = model.gauge().gamma();
    let a0 = (&a_raw + a_raw.transpose()) * 0.5 + gamma * 0.5;
    let run = propagate_riccati(&model, &a0, &end.x, TAU, 50, OdeOptions::with_tol(1e-12)).unwrap();
    let t_b = t0 + run.blow_up.unwrap_or(f64::NAN);
    let err = (t_b - TAU).abs();
    let res = run.max_lagrangian_residual;
    let pass = err < 1e-6 && res < 1e-8;
    report(
        5,
        "Riccati blow-up time",
        pass,
        format!("|t_b - 2pi| = {err:.2e}, max ||A^T - A + Gamma|| = {res:.2e}"),
    );
}

#[test]
fn criterion_06_gauge_equivalence_and_drift() {
    let model = bundled_model("mixed-n2").unwrap();
    let x_tw = sample_unit_level(&model, Formulation::Twisted, 6, 1).unwrap().remove(0);
    let tw = integrate(&model, Formulation::Twisted, &x_tw, 50.0, 1e-10, 500).unwrap();
    let ga = integrate(&model, Formulation::Gauged, &to_gauged(&model, &x_tw), 50.0, 1e-10, 500).unwrap();
    let mut dev = 0.0f64;
    for ((_, a), (_, b)) in tw.samples.iter().zip(&ga.samples) {
        let b_tw = to_twisted(&model, b);
        dev = dev.max((&a.q - &b_tw.q).norm()).max((&a.p - &b_tw.p).norm());
    }
    let long = integrate(&model, Formulation::Twisted, &x_tw, 100.0, 1e-10, 100).unwrap();
    let pass = dev < 1e-8 && long.energy_drift < 1e-9;
    report(
        6,
        "gauge equivalence + energy drift",
        pass,
        format!("orbit deviation (T=50) = {dev:.2e}, drift (T=100) = {:.2e}", long.energy_drift),
    );
}

#[test]
fn criterion_07_green_limit() {
    let free = bundled_model("flat-free-n2").unwrap();
    let x = sample_unit_level(&free, Formulation::Gauged, 7, 1).unwrap().remove(0);
    let rep = green_limit_report(&free, &x, &[10.0, 20.0, 40.0], 1e-10).unwrap();
    let ratios_ok = rep.norm_ratios.len() == 2
        && rep.norm_ratios.iter().all(|r| (r - 0.5).abs() < 0.1);

    let b1 = bundled_model("flat-b1").unwrap();
    let x = sample_unit_level(&b1, Formulation::Gauged, 7, 1).unwrap().remove(0);
    let sing = green_limit_report(&b1, &x, &[3.0, TAU, 7.0, 2.0 * TAU], 1e-10).unwrap();
    let flags_ok = sing.singular_count == 2
        && sing.norms[0].is_some()
        && sing.norms[1].is_none()
        && sing.norms[3].is_none();
    let pass = ratios_ok && flags_ok;
    report(
        7,
        "backward stable-field limit",
        pass,
        format!("halving ratios {:?}, singular frames at 2 pi Z: {flags_ok}", rep.norm_ratios),
    );
}

#[test]
fn criterion_08_finite_difference_oracles() {
    use rand::prelude::*;
    let model = bundled_model("mixed-n3").unwrap();
    let n = model.dim();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let q: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..TAU)).collect();
        let p = DVector::from_fn(n, |_, _| rng.gen_range(-1.5..1.5));
        for which in [Formulation::Twisted, Formulation::Gauged] {
            let b = model.hamiltonian_blocks(which, &q, &p);
            for i in 0..n {
                // first derivatives from the Hamiltonian value
                let mut qp = q.clone();
                let mut qm = q.clone();
                qp[i] += h;
                qm[i] -= h;
                let fd_q = (model.hamiltonian(which, &qp, &p) - model.hamiltonian(which, &qm, &p))
                    / (2.0 * h);
                let mut pp = p.clone();
                let mut pm = p.clone();
                pp[i] += h;
                pm[i] -= h;
                let fd_p = (model.hamiltonian(which, &q, &pp) - model.hamiltonian(which, &q, &pm))
                    / (2.0 * h);
                worst = worst.max((b.d_q[i] - fd_q).abs() / fd_q.abs().max(1.0));
                worst = worst.max((b.d_p[i] - fd_p).abs() / fd_p.abs().max(1.0));
                // second derivatives from the gradient blocks
                let bqp = model.hamiltonian_blocks(which, &qp, &p);
                let bqm = model.hamiltonian_blocks(which, &qm, &p);
                let bpp = model.hamiltonian_blocks(which, &q, &pp);
                let bpm = model.hamiltonian_blocks(which, &q, &pm);
                for j in 0..n {
                    let fd_qq = (bqp.d_q[j] - bqm.d_q[j]) / (2.0 * h);
                    let fd_pq = (bqp.d_p[j] - bqm.d_p[j]) / (2.0 * h); // d^2 H / dq_i dp_j
                    let fd_pp = (bpp.d_p[j] - bpm.d_p[j]) / (2.0 * h);
                    let fd_qp = (bpp.d_q[j] - bpm.d_q[j]) / (2.0 * h); // d^2 H / dp_i dq_j
                    worst = worst.max((b.qq[(i, j)] - fd_qq).abs() / fd_qq.abs().max(1.0));
                    worst = worst.max((b.pq[(j, i)] - fd_pq).abs() / fd_pq.abs().max(1.0));
                    worst = worst.max((b.pp[(i, j)] - fd_pp).abs() / fd_pp.abs().max(1.0));
                    worst = worst.max((b.qp[(j, i)] - fd_qp).abs() / fd_qp.abs().max(1.0));
                }
            }
        }
    }
    let pass = worst < 1e-6;
    report(8, "finite-difference block oracles", pass, format!("max rel deviation = {worst:.2e}"));
}

#[test]
fn criterion_09_trace_inequality() {
    let mut worst = f64::NEG_INFINITY;
    for name in ["flat-free-n2", "flat-b1", "mixed-n2", "mixed-n3"] {
        let model = bundled_model(name).unwrap();
        let n = model.dim();
        let gamma = model.gauge().gamma();
        let a0 = DMatrix::identity(n, n) + gamma * 0.5;
        let x0 = sample_unit_level(&model, Formulation::Gauged, 9, 1).unwrap().remove(0);
        let run = propagate_riccati(&model, &a0, &x0, 5.0, 100, OdeOptions::with_tol(1e-11)).unwrap();
        if run.blow_up.is_none() {
            worst = worst.max(trace_inequality_check(&model, &run));
        }
    }
    let pass = worst <= 1e-8;
    report(
        9,
        "Riccati trace inequality",
        pass,
        format!("max d(tr A)/dt + tr(Schur) = {worst:.2e}"),
    );
}

#[test]
fn criterion_10_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let mut pass = true;
    let mut detail = Vec::new();
    for (kind, name) in [
        (ExperimentKind::Integrate, "traj"),
        (ExperimentKind::ConjugateScan, "scan"),
        (ExperimentKind::Sigma, "sigma"),
    ] {
        let cfg = ExperimentConfig {
            model: Some("mixed-n2".into()),
            seed: 11,
            horizon: 8.0,
            samples: 20,
            grid: 8,
            sphere: 8,
            ..Default::default()
        };
        let p1 = dir.path().join(format!("{name}-1.out"));
        let p2 = dir.path().join(format!("{name}-2.out"));
        run_experiment(kind, &cfg, Some(&p1)).unwrap();
        run_experiment(kind, &cfg, Some(&p2)).unwrap();
        let same = std::fs::read(&p1).unwrap() == std::fs::read(&p2).unwrap();
        pass &= same;
        detail.push(format!("{name}: {}", if same { "identical" } else { "DIFFER" }));
    }
    report(10, "byte-identical artifacts", pass, detail.join(", "));
}
