//! FFT plumbing for vectors and row-major square matrices on the phase grid.

use std::sync::Arc;

use num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::scalar::Real;

/// Forward and inverse plans of one length, with scratch space.
pub struct Transforms<T: Real> {
    n: usize,
    fwd: Arc<dyn Fft<T>>,
    inv: Arc<dyn Fft<T>>,
    scratch: Vec<Complex<T>>,
}

impl<T: Real> Clone for Transforms<T> {
    fn clone(&self) -> Self {
        Self { n: self.n, fwd: self.fwd.clone(), inv: self.inv.clone(), scratch: self.scratch.clone() }
    }
}

impl<T: Real> Transforms<T> {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
        Self { n, fwd, inv, scratch: vec![Complex::new(T::zero(), T::zero()); len] }
    }

    /// Unnormalized forward DFT, sum_m x_m exp(-2 pi i k m / n), of every
    /// consecutive length-n chunk.
    pub fn forward(&mut self, buf: &mut [Complex<T>]) {
        self.fwd.process_with_scratch(buf, &mut self.scratch);
    }

    /// Unnormalized inverse DFT of every consecutive length-n chunk.
    pub fn inverse(&mut self, buf: &mut [Complex<T>]) {
        self.inv.process_with_scratch(buf, &mut self.scratch);
    }

    /// Replaces every row r of `m` by r * D where D = F^dagger diag(symbol) F,
    /// i.e. multiplication from the right by a momentum-diagonal operator.
    pub fn right_multiply(&mut self, m: &mut [Complex<T>], symbol: &[T]) {
        let n = self.n;
        let norm = T::one() / T::of(n as f64);
        self.inverse(m);
        for row in m.chunks_exact_mut(n) {
            for (x, &s) in row.iter_mut().zip(symbol) {
                *x = *x * (s * norm);
            }
        }
        self.forward(m);
    }

    /// Applies a momentum-diagonal operator to a column vector.
    pub fn apply_momentum(&mut self, v: &mut [Complex<T>], symbol: &[Complex<T>]) {
        let norm = T::one() / T::of(self.n as f64);
        self.forward(v);
        for (x, s) in v.iter_mut().zip(symbol) {
            *x = *x * *s * norm;
        }
        self.inverse(v);
    }
}

pub fn transpose<T: Copy>(src: &[T], dst: &mut [T], n: usize) {
    const B: usize = 16;
    for ib in (0..n).step_by(B) {
        for jb in (0..n).step_by(B) {
            for i in ib..(ib + B).min(n) {
                for j in jb..(jb + B).min(n) {
                    dst[j * n + i] = src[i * n + j];
                }
            }
        }
    }
}

/// m <- (m + m^dagger) / 2.
pub fn hermitize<T: Real>(m: &mut [Complex<T>], n: usize) {
    let half = T::of(0.5);
    for i in 0..n {
        let d = m[i * n + i];
        m[i * n + i] = Complex::new(d.re, T::zero());
        for j in (i + 1)..n {
            let a = m[i * n + j];
            let b = m[j * n + i].conj();
            let v = (a + b) * half;
            m[i * n + j] = v;
            m[j * n + i] = v.conj();
        }
    }
}
