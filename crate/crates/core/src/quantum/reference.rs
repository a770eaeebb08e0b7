//! Dense RK4 integration of the full master equation
//! d rho/dt = -i [H, rho] + gamma (a rho a^dagger - {a^dagger a, rho} / 2).
//!
//! Shares nothing with the split-operator path except the operator symbols,
//! so agreement between the two is a real check. Cost is O(N^3) per
//! evaluation; use grids of a few dozen to ~100 points.

use nalgebra::DMatrix;
use num_complex::Complex;

use super::operators::OperatorSet;
use super::state::DensityMatrix;
use crate::scalar::Real;

type M = DMatrix<Complex<f64>>;

fn dense<T: Real>(ops: &OperatorSet<T>, op: &super::operators::Operator<T>) -> M {
    let n = ops.dim();
    let d = ops.to_dense(op);
    M::from_fn(n, n, |i, j| Complex::new(d[i * n + j].re.f64(), d[i * n + j].im.f64()))
}

/// Largest eigenvalue of a positive semi-definite matrix by power iteration,
/// padded by 10% against slow convergence.
fn spectral_radius(m: &M) -> f64 {
    let n = m.nrows();
    let mut v = nalgebra::DVector::from_fn(n, |i, _| Complex::new(1.0 + (i as f64 * 0.37).sin(), 0.0));
    let mut est = 0.0;
    for _ in 0..200 {
        let w = m * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        est = norm / v.norm();
        v = w / Complex::new(norm, 0.0);
    }
    1.1 * est
}

/// Time-independent pieces of the generator.
pub struct DenseModel {
    n: usize,
    kinetic: M,
    a: M,
    a_dag: M,
    number: M,
    gamma: f64,
    kinetic_max: f64,
    number_norm: f64,
}

impl DenseModel {
    pub fn new<T: Real>(ops: &OperatorSet<T>, gamma: f64) -> Self {
        let kinetic = dense(ops, &ops.kinetic);
        let a = dense(ops, &ops.annihilation);
        let a_dag = a.adjoint();
        let number = &a_dag * &a;
        let kinetic_max = ops.kinetic.momentum.iter().map(|z| z.re.f64()).fold(0.0, f64::max);
        let number_norm = spectral_radius(&number);
        Self { n: ops.dim(), kinetic, a, a_dag, number, gamma, kinetic_max, number_norm }
    }

    fn rhs(&self, v: &[f64], rho: &M) -> M {
        let mut h = self.kinetic.clone();
        for i in 0..self.n {
            h[(i, i)] += Complex::new(v[i], 0.0);
        }
        // The full commutator, so roundoff outside the Hermitian subspace is
        // not fed back into the trace.
        let unitary = (&h * rho - rho * &h) * Complex::new(0.0, -1.0);
        if self.gamma == 0.0 {
            return unitary;
        }
        let anti = &self.number * rho + rho * &self.number;
        let jump = &self.a * rho * &self.a_dag;
        unitary + (jump - anti * Complex::new(0.5, 0.0)) * Complex::new(self.gamma, 0.0)
    }

    /// Advances `rho` by `h` with potentials sampled at the start, middle and
    /// end of the step; sub-steps as needed for stability.
    pub fn step<T: Real>(&self, rho: &mut DensityMatrix<T>, v: [&[T]; 3], h: f64) {
        let n = self.n;
        let to64 = |x: &[T]| x.iter().map(|y| y.f64()).collect::<Vec<_>>();
        let (v0, vm, v1) = (to64(v[0]), to64(v[1]), to64(v[2]));
        let spread = |x: &[f64]| {
            let (lo, hi) = x.iter().fold((f64::MAX, f64::MIN), |(a, b), &y| (a.min(y), b.max(y)));
            hi - lo
        };
        // Commutator eigenvalues span twice the range of H.
        let radius = 2.0 * (spread(&v0).max(spread(&v1)) + self.kinetic_max) + self.gamma * self.number_norm;
        let subs = (h * radius / 2.5).ceil().max(1.0) as usize;
        let hs = h / subs as f64;
        let lerp = |u: f64| -> Vec<f64> {
            // Quadratic through (0, v0), (1/2, vm), (1, v1).
            (0..n)
                .map(|i| {
                    let (a, b, c) = (v0[i], vm[i], v1[i]);
                    a + u * (-3.0 * a + 4.0 * b - c) + u * u * (2.0 * a - 4.0 * b + 2.0 * c)
                })
                .collect()
        };
        let mut r = M::from_fn(n, n, |i, j| {
            let z = rho.data[i * n + j];
            Complex::new(z.re.f64(), z.im.f64())
        });
        let c = |x: f64| Complex::new(x, 0.0);
        for s in 0..subs {
            let u = s as f64 / subs as f64;
            let du = 1.0 / subs as f64;
            let (va, vb, vc) = (lerp(u), lerp(u + 0.5 * du), lerp(u + du));
            let k1 = self.rhs(&va, &r);
            let k2 = self.rhs(&vb, &(&r + &k1 * c(0.5 * hs)));
            let k3 = self.rhs(&vb, &(&r + &k2 * c(0.5 * hs)));
            let k4 = self.rhs(&vc, &(&r + &k3 * c(hs)));
            r += (k1 + (k2 + k3) * c(2.0) + k4) * c(hs / 6.0);
        }
        for i in 0..n {
            for j in 0..n {
                let z = r[(i, j)];
                rho.data[i * n + j] = Complex::new(T::of(z.re), T::of(z.im));
            }
        }
    }
}
