//! Real trigonometric polynomials on the torus `T^n = R^n / (2*pi*Z)^n`.
//!
//! A [`TrigPoly`] is a finite Fourier series with real coefficients,
//!
//! ```text
//! f(q) = sum_k  a_k cos(k.q) + b_k sin(k.q)
//! ```
//!
//! stored with one canonical representative per `{k, -k}` pair (the first
//! nonzero component of a stored wavevector is positive; `k = 0` carries only
//! a cosine coefficient). All derivatives are again trig polynomials and are
//! computed exactly from the coefficients.

use nalgebra::{DMatrix, DVector};
use std::f64::consts::TAU;

/// A single Fourier mode: wavevector plus cosine/sine coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct TrigMode {
    pub k: Vec<i64>,
    pub a: f64,
    pub b: f64,
}

/// Real-valued finite Fourier series on `T^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrigPoly {
    dim: usize,
    modes: Vec<TrigMode>,
}

impl TrigPoly {
    /// The identically-zero polynomial.
    pub fn zero(dim: usize) -> Self {
        assert!(dim >= 1, "dimension must be positive");
        TrigPoly { dim, modes: Vec::new() }
    }

    /// A constant polynomial.
    pub fn constant(dim: usize, c: f64) -> Self {
        let mut p = TrigPoly::zero(dim);
        if c != 0.0 {
            p.modes.push(TrigMode { k: vec![0; dim], a: c, b: 0.0 });
        }
        p
    }

    /// Build from raw modes. Wavevectors are canonicalized (`k -> -k` flips
    /// the sine coefficient), duplicates are merged, zero modes dropped.
    pub fn from_modes(dim: usize, modes: impl IntoIterator<Item = TrigMode>) -> Self {
        let mut p = TrigPoly::zero(dim);
        for m in modes {
            assert_eq!(m.k.len(), dim, "wavevector dimension mismatch");
            p.add_mode(&m.k, m.a, m.b);
        }
        p.normalize();
        p
    }

    /// Convenience: single mode `a*cos(k.q) + b*sin(k.q)`.
    pub fn single(dim: usize, k: &[i64], a: f64, b: f64) -> Self {
        TrigPoly::from_modes(dim, [TrigMode { k: k.to_vec(), a, b }])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn modes(&self) -> &[TrigMode] {
        &self.modes
    }

    pub fn is_zero(&self) -> bool {
        self.modes.is_empty()
    }

    /// Mean value over the torus (the `k = 0` coefficient).
    pub fn mean(&self) -> f64 {
        self.modes
            .iter()
            .find(|m| m.k.iter().all(|&ki| ki == 0))
            .map_or(0.0, |m| m.a)
    }

    /// Largest `|k_i|` over all stored modes.
    pub fn max_wavenumber(&self) -> i64 {
        self.modes
            .iter()
            .flat_map(|m| m.k.iter().map(|&ki| ki.abs()))
            .max()
            .unwrap_or(0)
    }

    fn add_mode(&mut self, k: &[i64], a: f64, b: f64) {
        let (kc, ac, bc) = canonical(k, a, b);
        if let Some(m) = self.modes.iter_mut().find(|m| m.k == kc) {
            m.a += ac;
            m.b += bc;
        } else {
            self.modes.push(TrigMode { k: kc, a: ac, b: bc });
        }
    }

    fn normalize(&mut self) {
        self.modes.retain(|m| m.a != 0.0 || m.b != 0.0);
        self.modes.sort_by(|x, y| x.k.cmp(&y.k));
    }

    /// Evaluate at a point (periodic; any real coordinates accepted).
    pub fn eval(&self, q: &[f64]) -> f64 {
        debug_assert_eq!(q.len(), self.dim);
        let mut acc = 0.0;
        for m in &self.modes {
            let phase = dot(&m.k, q);
            acc += m.a * phase.cos() + m.b * phase.sin();
        }
        acc
    }

    /// Exact partial derivative with respect to `q_i`.
    pub fn partial(&self, i: usize) -> TrigPoly {
        assert!(i < self.dim);
        let mut out = TrigPoly::zero(self.dim);
        for m in &self.modes {
            let ki = m.k[i] as f64;
            if ki != 0.0 {
                // d/dq_i [a cos + b sin](k.q) = k_i b cos - k_i a sin
                out.add_mode(&m.k, ki * m.b, -ki * m.a);
            }
        }
        out.normalize();
        out
    }

    /// Exact Laplacian as a trig polynomial.
    pub fn laplacian_poly(&self) -> TrigPoly {
        let mut out = TrigPoly::zero(self.dim);
        for m in &self.modes {
            let k2: f64 = m.k.iter().map(|&ki| (ki * ki) as f64).sum();
            if k2 != 0.0 {
                out.add_mode(&m.k, -k2 * m.a, -k2 * m.b);
            }
        }
        out.normalize();
        out
    }

    /// Gradient at a point.
    pub fn grad(&self, q: &[f64]) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim);
        for m in &self.modes {
            let phase = dot(&m.k, q);
            let d = -m.a * phase.sin() + m.b * phase.cos();
            for i in 0..self.dim {
                g[i] += (m.k[i] as f64) * d;
            }
        }
        g
    }

    /// Laplacian value at a point.
    pub fn laplacian(&self, q: &[f64]) -> f64 {
        let mut acc = 0.0;
        for m in &self.modes {
            let k2: f64 = m.k.iter().map(|&ki| (ki * ki) as f64).sum();
            let phase = dot(&m.k, q);
            acc -= k2 * (m.a * phase.cos() + m.b * phase.sin());
        }
        acc
    }

    /// Hessian matrix at a point.
    pub fn hessian(&self, q: &[f64]) -> DMatrix<f64> {
        let n = self.dim;
        let mut h = DMatrix::zeros(n, n);
        for m in &self.modes {
            let phase = dot(&m.k, q);
            let d2 = -(m.a * phase.cos() + m.b * phase.sin());
            for i in 0..n {
                for j in 0..n {
                    h[(i, j)] += (m.k[i] as f64) * (m.k[j] as f64) * d2;
                }
            }
        }
        h
    }

    pub fn add(&self, other: &TrigPoly) -> TrigPoly {
        assert_eq!(self.dim, other.dim);
        let mut out = self.clone();
        for m in &other.modes {
            out.add_mode(&m.k, m.a, m.b);
        }
        out.normalize();
        out
    }

    pub fn scale(&self, c: f64) -> TrigPoly {
        let mut out = self.clone();
        for m in &mut out.modes {
            m.a *= c;
            m.b *= c;
        }
        out.normalize();
        out
    }

    /// Crude uniform bound on the gradient norm: `sum_k |k| sqrt(a^2+b^2)`.
    pub fn grad_bound(&self) -> f64 {
        self.modes
            .iter()
            .map(|m| {
                let knorm = m
                    .k
                    .iter()
                    .map(|&ki| (ki * ki) as f64)
                    .sum::<f64>()
                    .sqrt();
                knorm * m.a.hypot(m.b)
            })
            .sum()
    }
}

fn canonical(k: &[i64], a: f64, b: f64) -> (Vec<i64>, f64, f64) {
    match k.iter().find(|&&ki| ki != 0) {
        None => (k.to_vec(), a, 0.0), // sin(0) contributes nothing
        Some(&first) if first > 0 => (k.to_vec(), a, b),
        Some(_) => (k.iter().map(|&ki| -ki).collect(), a, -b),
    }
}

fn dot(k: &[i64], q: &[f64]) -> f64 {
    k.iter().zip(q).map(|(&ki, &qi)| ki as f64 * qi).sum()
}

/// Wrap a coordinate vector into `[0, 2*pi)^n`.
pub fn wrap_torus(q: &DVector<f64>) -> DVector<f64> {
    q.map(|x| x.rem_euclid(TAU))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn lam() -> TrigPoly {
        // 1 + 0.5 cos(q1)
        TrigPoly::from_modes(
            2,
            [
                TrigMode { k: vec![0, 0], a: 1.0, b: 0.0 },
                TrigMode { k: vec![1, 0], a: 0.5, b: 0.0 },
            ],
        )
    }

    #[test]
    fn eval_at_zero() {
        assert_relative_eq!(lam().eval(&[0.0, 0.0]), 1.5);
    }

    #[test]
    fn grad_of_cosine() {
        let g = lam().grad(&[PI / 2.0, 0.3]);
        assert_relative_eq!(g[0], -0.5, epsilon = 1e-15);
        assert_relative_eq!(g[1], 0.0);
    }

    #[test]
    fn laplacian_of_cosine() {
        let eps = 0.25;
        let f = TrigPoly::single(3, &[1, 0, 0], eps, 0.0).add(&TrigPoly::constant(3, 1.0));
        let q = [0.7, -0.2, 1.1];
        assert_relative_eq!(f.laplacian(&q), -eps * q[0].cos(), epsilon = 1e-15);
        assert_relative_eq!(f.laplacian_poly().eval(&q), f.laplacian(&q), epsilon = 1e-15);
    }

    #[test]
    fn canonical_negative_wavevector() {
        // cos(-k.q) = cos(k.q), sin(-k.q) = -sin(k.q)
        let p = TrigPoly::single(2, &[-1, 2], 0.3, 0.4);
        let q: [f64; 2] = [0.9, -1.7];
        let expect = 0.3 * (-q[0] + 2.0 * q[1]).cos() + 0.4 * (-q[0] + 2.0 * q[1]).sin();
        assert_relative_eq!(p.eval(&q), expect, epsilon = 1e-15);
        assert_eq!(p.modes()[0].k, vec![1, -2]);
    }

    #[test]
    fn periodicity() {
        let p = TrigPoly::single(2, &[2, 3], 0.7, -0.2);
        let q = [0.4, 1.9];
        let shifted = [0.4 + TAU, 1.9 - TAU];
        assert_relative_eq!(p.eval(&q), p.eval(&shifted), epsilon = 1e-12);
    }

    #[test]
    fn finite_difference_grad() {
        let p = TrigPoly::from_modes(
            2,
            [
                TrigMode { k: vec![1, 0], a: 0.3, b: 0.1 },
                TrigMode { k: vec![1, 2], a: -0.2, b: 0.4 },
            ],
        );
        let q = [0.8, -0.3];
        let h = 1e-6;
        let g = p.grad(&q);
        for i in 0..2 {
            let mut qp = q;
            let mut qm = q;
            qp[i] += h;
            qm[i] -= h;
            let fd = (p.eval(&qp) - p.eval(&qm)) / (2.0 * h);
            assert_relative_eq!(g[i], fd, epsilon = 1e-9);
        }
    }

    #[test]
    fn partial_matches_grad() {
        let p = TrigPoly::single(3, &[1, -1, 2], 0.5, 0.25);
        let q = [0.1, 0.2, 0.3];
        let g = p.grad(&q);
        for i in 0..3 {
            assert_relative_eq!(p.partial(i).eval(&q), g[i], epsilon = 1e-14);
        }
    }
}
