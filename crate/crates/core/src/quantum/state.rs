use nalgebra::DMatrix;
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimulationMode {
    #[default]
    DensityMatrix,
    PureState,
}

/// Row-major square complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix<T> {
    pub n: usize,
    pub data: Vec<Complex<T>>,
}

impl<T: Real> DensityMatrix<T> {
    pub fn from_pure(psi: &[Complex<T>]) -> Self {
        let n = psi.len();
        let mut data = Vec::with_capacity(n * n);
        for a in psi {
            for b in psi {
                data.push(*a * b.conj());
            }
        }
        Self { n, data }
    }

    pub fn trace(&self) -> T {
        (0..self.n).map(|i| self.data[i * self.n + i].re).sum()
    }

    pub fn populations(&self) -> Vec<T> {
        (0..self.n).map(|i| self.data[i * self.n + i].re).collect()
    }

    /// max |rho - rho^dagger|.
    pub fn hermiticity_error(&self) -> T {
        let n = self.n;
        let mut e = T::zero();
        for i in 0..n {
            for j in i..n {
                e = e.max((self.data[i * n + j] - self.data[j * n + i].conj()).norm());
            }
        }
        e
    }

    /// Smallest eigenvalue, computed in f64.
    pub fn min_eigenvalue(&self) -> Result<f64> {
        let n = self.n;
        let m = DMatrix::from_fn(n, n, |i, j| {
            let z = self.data[i * n + j];
            let w = self.data[j * n + i].conj();
            nalgebra::Complex::new(0.5 * (z.re.f64() + w.re.f64()), 0.5 * (z.im.f64() + w.im.f64()))
        });
        let eig = m
            .try_symmetric_eigen(1e-14, 10_000)
            .ok_or_else(|| Error::Internal("Hermitian eigensolver did not converge".into()))?;
        Ok(eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min))
    }

    /// Tr(rho^2).
    pub fn purity(&self) -> T {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StateData<T> {
    Pure(Vec<Complex<T>>),
    Density(DensityMatrix<T>),
}

/// State on the phase grid at a given time (ns).
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState<T> {
    pub time: f64,
    pub data: StateData<T>,
}

impl<T: Real> QuantumState<T> {
    pub fn pure(psi: Vec<Complex<T>>, time: f64) -> Self {
        Self { time, data: StateData::Pure(psi) }
    }

    pub fn mode(&self) -> SimulationMode {
        match self.data {
            StateData::Pure(_) => SimulationMode::PureState,
            StateData::Density(_) => SimulationMode::DensityMatrix,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.data {
            StateData::Pure(p) => p.len(),
            StateData::Density(r) => r.n,
        }
    }

    pub fn pure_vector(&self) -> Option<&Vec<Complex<T>>> {
        match &self.data {
            StateData::Pure(p) => Some(p),
            StateData::Density(_) => None,
        }
    }

    pub fn density(&self) -> Option<&DensityMatrix<T>> {
        match &self.data {
            StateData::Density(r) => Some(r),
            StateData::Pure(_) => None,
        }
    }

    pub fn to_density(&self) -> Self {
        match &self.data {
            StateData::Pure(p) => Self { time: self.time, data: StateData::Density(DensityMatrix::from_pure(p)) },
            StateData::Density(_) => self.clone(),
        }
    }

    pub fn into_mode(self, mode: SimulationMode) -> Result<Self> {
        match (mode, &self.data) {
            (SimulationMode::DensityMatrix, _) => Ok(self.to_density()),
            (SimulationMode::PureState, StateData::Pure(_)) => Ok(self),
            (SimulationMode::PureState, StateData::Density(_)) => {
                Err(Error::Config("a density matrix cannot be turned into a pure state".into()))
            }
        }
    }

    /// Probability of each grid point.
    pub fn populations(&self) -> Vec<T> {
        match &self.data {
            StateData::Pure(p) => p.iter().map(|z| z.norm_sqr()).collect(),
            StateData::Density(r) => r.populations(),
        }
    }

    /// Norm squared or trace.
    pub fn trace(&self) -> T {
        match &self.data {
            StateData::Pure(p) => p.iter().map(|z| z.norm_sqr()).sum(),
            StateData::Density(r) => r.trace(),
        }
    }

    /// Mirror image phi -> -phi on a symmetric grid.
    pub fn mirrored(&self) -> Self {
        let data = match &self.data {
            StateData::Pure(p) => StateData::Pure(p.iter().rev().cloned().collect()),
            StateData::Density(r) => {
                let n = r.n;
                let mut d = r.data.clone();
                for i in 0..n {
                    for j in 0..n {
                        d[i * n + j] = r.data[(n - 1 - i) * n + (n - 1 - j)];
                    }
                }
                StateData::Density(DensityMatrix { n, data: d })
            }
        };
        Self { time: self.time, data }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projector_properties() {
        let psi: Vec<Complex<f64>> = (0..6).map(|i| Complex::new(i as f64, 1.0 - i as f64)).collect();
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let psi: Vec<_> = psi.into_iter().map(|z| z / norm).collect();
        let rho = DensityMatrix::from_pure(&psi);
        assert!((rho.trace() - 1.0).abs() < 1e-14);
        assert!(rho.hermiticity_error() < 1e-15);
        assert!((rho.purity() - 1.0).abs() < 1e-13);
        assert!(rho.min_eigenvalue().unwrap() > -1e-12);
        let s = QuantumState::pure(psi, 0.0);
        assert!(s.into_mode(SimulationMode::PureState).is_ok());
        let d = QuantumState::pure(vec![Complex::new(1.0, 0.0)], 0.0).to_density();
        assert!(d.into_mode(SimulationMode::PureState).is_err());
    }
}
