//! Phase-grid quantum engine: operators, states, eigenstates and the
//! Lindblad / Schroedinger integrators.

mod engine;
mod grid;
mod operators;
mod reference;
pub(crate) mod spectral;
mod state;

pub use engine::{
    momentum_populations, EngineConfig, GridTransfer, HoldGrid, Integrator, Observable, QuantumEngine, RecordSpec,
    SegmentSummary, Snapshot, SwitchGrid, Trajectory, DEFAULT_GAMMA,
};
pub use grid::{PhaseGrid, MIN_POINTS};
pub use operators::{
    build_hamiltonian, build_operators, DerivativeScheme, Expectation, Operator, OperatorSet,
    MAX_SPACING_PER_LAMBDA,
};
pub use state::{DensityMatrix, QuantumState, SimulationMode, StateData};

use nalgebra::DMatrix;
use num_complex::Complex;

use crate::circuit::FluxBias;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Lowest `count` eigenpairs (energy in rad/ns, normalized vector) of a
/// Hermitian operator. Solved in f64.
pub fn eigenstates<T: Real>(ops: &OperatorSet<T>, h: &Operator<T>, count: usize) -> Result<Vec<(T, Vec<Complex<T>>)>> {
    let n = ops.dim();
    let dense = ops.to_dense(h);
    let imag = dense.iter().map(|z| z.im.abs().f64()).fold(0.0, f64::max);
    let scale = dense.iter().map(|z| z.re.abs().f64()).fold(0.0, f64::max);
    let vectors: Vec<(f64, Vec<Complex<f64>>)> = if imag <= 1e-12 * scale {
        let m = DMatrix::from_fn(n, n, |i, j| 0.5 * (dense[i * n + j].re + dense[j * n + i].re).f64());
        let eig = m
            .try_symmetric_eigen(1e-14, 10_000)
            .ok_or_else(|| Error::Internal("symmetric eigensolver did not converge".into()))?;
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        idx.into_iter()
            .take(count)
            .map(|k| {
                let v = eig.eigenvectors.column(k);
                (eig.eigenvalues[k], v.iter().map(|&x| Complex::new(x, 0.0)).collect())
            })
            .collect()
    } else {
        let m = DMatrix::from_fn(n, n, |i, j| {
            let (a, b) = (dense[i * n + j], dense[j * n + i].conj());
            nalgebra::Complex::new(0.5 * (a.re + b.re).f64(), 0.5 * (a.im + b.im).f64())
        });
        let eig = m
            .try_symmetric_eigen(1e-14, 10_000)
            .ok_or_else(|| Error::Internal("Hermitian eigensolver did not converge".into()))?;
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        idx.into_iter()
            .take(count)
            .map(|k| {
                let v = eig.eigenvectors.column(k);
                (eig.eigenvalues[k], v.iter().map(|z| Complex::new(z.re, z.im)).collect())
            })
            .collect()
    };
    Ok(vectors
        .into_iter()
        .map(|(e, v)| {
            // Fix the arbitrary global phase: largest component real positive.
            let pivot = v.iter().cloned().fold(Complex::new(0.0, 0.0), |a, z| if z.norm() > a.norm() { z } else { a });
            let phase = if pivot.norm() > 0.0 { pivot.conj() / pivot.norm() } else { Complex::new(1.0, 0.0) };
            let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            let v = v.into_iter().map(|z| {
                let w = z * phase / norm;
                Complex::new(T::of(w.re), T::of(w.im))
            });
            (T::of(e), v.collect())
        })
        .collect())
}

/// Ground state of the undriven Hamiltonian at `bias` and its energy (rad/ns).
pub fn ground_state<T: Real>(ops: &OperatorSet<T>, bias: &FluxBias<T>) -> Result<(QuantumState<T>, T)> {
    let h = build_hamiltonian(ops, bias, T::zero());
    let mut pairs = eigenstates(ops, &h, 1)?;
    let (e, v) = pairs.pop().ok_or_else(|| Error::Internal("empty spectrum".into()))?;
    Ok((QuantumState::pure(v, 0.0), e))
}

/// (p_left, p_right) split at `barrier`; grid points strictly below it count
/// as left. Normalized by the trace.
pub fn well_probabilities<T: Real>(ops: &OperatorSet<T>, state: &QuantumState<T>, barrier: T) -> (T, T) {
    let pops = state.populations();
    let total: T = pops.iter().copied().sum();
    let left: T = ops.phi.iter().zip(&pops).filter(|(x, _)| **x < barrier).map(|(_, p)| *p).sum();
    let left = left / total;
    (left, T::one() - left)
}
