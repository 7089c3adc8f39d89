//! Randomized structural properties, driven by proptest.

use magflow::dynamics::normalize_energy;
use magflow::fourier::{TrigMode, TrigPoly};
use magflow::lab::bundled_model;
use magflow::model::{decompose, OneForm, TwoForm};
use magflow::{Formulation, PhasePoint};
use nalgebra::DVector;
use proptest::prelude::*;
use std::f64::consts::TAU;

fn small_coeff() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), -1.0..1.0f64]
}

fn trig_poly(dim: usize) -> impl Strategy<Value = TrigPoly> {
    prop::collection::vec(
        (prop::collection::vec(-2i64..=2, dim), small_coeff(), small_coeff()),
        0..4,
    )
    .prop_map(move |modes| {
        TrigPoly::from_modes(dim, modes.into_iter().map(|(k, a, b)| TrigMode { k, a, b }))
    })
}

fn point(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, dim)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn poly_is_periodic(p in trig_poly(2), q in point(2), shift in prop::collection::vec(-3i32..=3, 2)) {
        let shifted: Vec<f64> = q.iter().zip(&shift).map(|(&x, &s)| x + s as f64 * TAU).collect();
        let a = p.eval(&q);
        let b = p.eval(&shifted);
        prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
    }

    #[test]
    fn partial_derivatives_commute(p in trig_poly(3), q in point(3)) {
        // d_i d_j f = d_j d_i f, exactly on coefficients
        let d01 = p.partial(0).partial(1);
        let d10 = p.partial(1).partial(0);
        prop_assert!((d01.eval(&q) - d10.eval(&q)).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_partials(p in trig_poly(2), q in point(2)) {
        let g = p.grad(&q);
        for i in 0..2 {
            prop_assert!((g[i] - p.partial(i).eval(&q)).abs() < 1e-12);
        }
    }

    #[test]
    fn decompose_reconstructs_planar_fields(b01 in trig_poly(2), q in point(2)) {
        // every two-form on T^2 is closed
        let mut beta = TwoForm::zero(2);
        beta.set(0, 1, b01);
        let gauge = decompose(&beta).unwrap();
        // Gamma + d(alpha) = beta pointwise
        let rec = gauge.gamma() + gauge.alpha().exterior_derivative().matrix_at(&q);
        let target = beta.matrix_at(&q);
        prop_assert!((rec - target).norm() < 1e-10);
        // alpha has zero mean
        for c in gauge.alpha().components() {
            prop_assert!(c.mean().abs() < 1e-12);
        }
    }

    #[test]
    fn decompose_splits_exact_plus_constant(a1 in trig_poly(3), a2 in trig_poly(3), a3 in trig_poly(3), g in -2.0..2.0f64, q in point(3)) {
        // beta = d(alpha) + Gamma is closed by construction
        let alpha = OneForm::new(vec![a1, a2, a3]);
        let mut beta = alpha.exterior_derivative();
        beta = beta.add(&TwoForm::constant_b(3, g));
        let gauge = decompose(&beta).unwrap();
        prop_assert!((gauge.gamma()[(0, 1)] - g).abs() < 1e-12);
        let rec = gauge.gamma() + gauge.alpha().exterior_derivative().matrix_at(&q);
        prop_assert!((rec - beta.matrix_at(&q)).norm() < 1e-9);
    }

    #[test]
    fn normalization_lands_on_the_level(qv in point(2), pv in point(2), which in prop_oneof![Just(Formulation::Twisted), Just(Formulation::Gauged)]) {
        prop_assume!(pv.iter().map(|x| x * x).sum::<f64>() > 1e-6);
        let model = bundled_model("mixed-n2").unwrap();
        let x = PhasePoint::new(DVector::from_vec(qv), DVector::from_vec(pv));
        let y = normalize_energy(&model, which, &x).unwrap();
        let h = model.hamiltonian(which, y.q_wrapped().as_slice(), &y.p);
        prop_assert!((h - 0.5).abs() < 1e-12);
    }
}
