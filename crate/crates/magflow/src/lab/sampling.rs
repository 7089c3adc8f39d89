//! Seeded, reproducible sampling of initial conditions.
//!
//! Points come from a Halton sequence with a Cranley-Patterson rotation drawn
//! from a seeded ChaCha stream: low-discrepancy coverage of `T^n x S^{n-1}`,
//! different for every seed, identical across runs and platforms.

use crate::dynamics::{normalize_energy, DynamicsError, PhasePoint};
use crate::model::{Formulation, MagneticModel};
use nalgebra::DVector;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use std::f64::consts::{PI, TAU};

const PRIMES: [u64; 10] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut inv = 0.0;
    let mut denom = 1.0;
    while i > 0 {
        denom *= base as f64;
        inv += (i % base) as f64 / denom;
        i /= base;
    }
    inv
}

/// Halton points in `[0, 1)^dims` with a per-seed random shift (mod 1).
pub struct HaltonSampler {
    bases: Vec<u64>,
    shifts: Vec<f64>,
    index: u64,
}

impl HaltonSampler {
    pub fn new(dims: usize, seed: u64) -> Self {
        assert!(dims <= PRIMES.len(), "at most {} dimensions", PRIMES.len());
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let shifts = (0..dims).map(|_| rng.gen_range(0.0..1.0)).collect();
        HaltonSampler { bases: PRIMES[..dims].to_vec(), shifts, index: 0 }
    }

    pub fn next_point(&mut self) -> Vec<f64> {
        self.index += 1;
        self.bases
            .iter()
            .zip(&self.shifts)
            .map(|(&b, &s)| (radical_inverse(self.index, b) + s).fract())
            .collect()
    }
}

/// Map `n - 1` uniforms to a point on `S^{n-1}` (area-uniform).
pub fn unit_sphere_point(n: usize, u: &[f64]) -> DVector<f64> {
    assert_eq!(u.len(), n - 1);
    match n {
        2 => {
            let th = TAU * u[0];
            DVector::from_vec(vec![th.cos(), th.sin()])
        }
        3 => {
            let t = 2.0 * u[0] - 1.0;
            let s = (1.0 - t * t).sqrt();
            let ph = TAU * u[1];
            DVector::from_vec(vec![s * ph.cos(), s * ph.sin(), t])
        }
        4 => {
            // outermost coordinate has density (2/pi) sqrt(1 - w^2); invert
            // its CDF by bisection
            let w = inverse_semicircle_cdf(u[0]);
            let sw = (1.0 - w * w).sqrt();
            let t = 2.0 * u[1] - 1.0;
            let s = (1.0 - t * t).sqrt();
            let ph = TAU * u[2];
            DVector::from_vec(vec![sw * s * ph.cos(), sw * s * ph.sin(), sw * t, w])
        }
        _ => panic!("sphere sampling implemented for dimensions 2..=4"),
    }
}

fn inverse_semicircle_cdf(x: f64) -> f64 {
    let cdf = |w: f64| 0.5 + (w * (1.0 - w * w).sqrt() + w.asin()) / PI;
    let (mut lo, mut hi) = (-1.0, 1.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Draw `count` seeded points on the unit energy level `{H = 1/2}` of the
/// chosen formulation: `q` low-discrepancy on the torus, direction
/// low-discrepancy on the sphere, momentum scaled onto the level.
pub fn sample_unit_level(
    model: &MagneticModel,
    which: Formulation,
    seed: u64,
    count: usize,
) -> Result<Vec<PhasePoint>, DynamicsError> {
    let n = model.dim();
    let mut halton = HaltonSampler::new(2 * n - 1, seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let u = halton.next_point();
        let q = DVector::from_iterator(n, u[..n].iter().map(|&x| TAU * x));
        let omega = unit_sphere_point(n, &u[n..]);
        let raw = match which {
            Formulation::Twisted => omega,
            Formulation::Gauged => omega + model.gauge().alpha().eval(q.as_slice()),
        };
        out.push(normalize_energy(model, which, &PhasePoint::new(q, raw))?);
    }
    Ok(out)
}
