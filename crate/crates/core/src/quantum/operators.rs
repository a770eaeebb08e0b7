use num_complex::Complex;
use serde::{Deserialize, Serialize};

use super::grid::PhaseGrid;
use super::spectral::Transforms;
use super::state::{QuantumState, StateData};
use crate::circuit::{derive_energies, DeviceParams, FluxBias};
use crate::error::{domain, Error, Result};
use crate::potential::PotentialCoefficients;
use crate::scalar::Real;

/// Discretization of d/dphi.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeScheme {
    /// Exact derivative of the trigonometric interpolant.
    #[default]
    Spectral,
    /// Periodic 5-point central stencil.
    FivePoint,
}

/// Largest grid spacing accepted, in units of the zero-point length lambda.
pub const MAX_SPACING_PER_LAMBDA: f64 = 1.0 / 3.0;

/// Operator of the form diag(position) + F^dagger diag(momentum) F, where F is
/// the unitary DFT on the grid. Covers every operator the engine needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator<T> {
    pub position: Vec<Complex<T>>,
    pub momentum: Vec<Complex<T>>,
}

impl<T: Real> Operator<T> {
    pub fn dim(&self) -> usize {
        self.position.len()
    }

    pub fn identity(n: usize) -> Self {
        Self { position: vec![Complex::new(T::one(), T::zero()); n], momentum: vec![Complex::new(T::zero(), T::zero()); n] }
    }

    pub fn adjoint(&self) -> Self {
        Self {
            position: self.position.iter().map(|z| z.conj()).collect(),
            momentum: self.momentum.iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn is_hermitian(&self) -> bool {
        self.position.iter().chain(&self.momentum).all(|z| z.im == T::zero())
    }

    fn real_parts(position: Vec<T>, momentum: Vec<T>) -> Self {
        let c = |v: Vec<T>| v.into_iter().map(|x| Complex::new(x, T::zero())).collect();
        Self { position: c(position), momentum: c(momentum) }
    }
}

/// Result of an expectation value together with the size of the discarded
/// imaginary part.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Expectation<T> {
    pub value: T,
    pub imag_residue: T,
}

/// Phase-grid operators of one device.
#[derive(Clone)]
pub struct OperatorSet<T: Real> {
    pub grid: PhaseGrid<T>,
    pub scheme: DerivativeScheme,
    /// Grid points.
    pub phi: Vec<T>,
    /// Eigenvalue of n_op on each FFT mode.
    pub n_symbol: Vec<T>,
    /// Kinetic coefficient A with H_kin = (A/2) n^2, rad/ns.
    pub kinetic_coeff: T,
    /// Harmonic zero-point length, lambda^2 = sqrt(A / E_L).
    pub lambda: T,
    /// Potential coefficients in rad/ns.
    pub potential: PotentialCoefficients<T>,
    pub phi_op: Operator<T>,
    pub n_op: Operator<T>,
    pub kinetic: Operator<T>,
    pub annihilation: Operator<T>,
    pub(crate) fft: Transforms<T>,
}

impl<T: Real> std::fmt::Debug for OperatorSet<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OperatorSet")
            .field("grid", &self.grid)
            .field("scheme", &self.scheme)
            .field("kinetic_coeff", &self.kinetic_coeff)
            .field("lambda", &self.lambda)
            .finish_non_exhaustive()
    }
}

fn momentum_symbol<T: Real>(grid: &PhaseGrid<T>, scheme: DerivativeScheme) -> Vec<T> {
    let h = grid.spacing;
    grid.wavenumbers()
        .into_iter()
        .map(|k| match scheme {
            DerivativeScheme::Spectral => k,
            DerivativeScheme::FivePoint => {
                // Fourier symbol of (-f[i+2] + 8 f[i+1] - 8 f[i-1] + f[i-2]) / (12 h).
                (T::of(8.0) * (k * h).sin() - (T::of(2.0) * k * h).sin()) / (T::of(6.0) * h)
            }
        })
        .collect()
}

/// Builds phi, n = -i d/dphi, the kinetic term and the harmonic annihilation
/// operator a = (phi / lambda + i lambda n) / sqrt 2.
pub fn build_operators<T: Real>(
    grid: &PhaseGrid<T>,
    params: &DeviceParams<T>,
    scheme: DerivativeScheme,
) -> Result<OperatorSet<T>> {
    let scales = derive_energies(params)?;
    let gh = PotentialCoefficients::from_params(params)?;
    let tau = T::TAU();
    let potential = PotentialCoefficients {
        e_l: gh.e_l * tau,
        e_j_plus: gh.e_j_plus * tau,
        e_j_minus: gh.e_j_minus * tau,
        f_lc: gh.f_lc,
    };
    let kinetic_coeff = scales.omega0 * scales.omega0 / potential.e_l;
    let lambda = (kinetic_coeff / potential.e_l).sqrt().sqrt();
    let limit = lambda * T::of(MAX_SPACING_PER_LAMBDA);
    if grid.spacing > limit {
        let needed = ((grid.phi_max - grid.phi_min) / limit).f64().ceil() as usize + 1;
        return Err(domain(format!(
            "grid spacing {:.4} rad exceeds lambda/3 = {:.4} rad; use at least n_points = {needed} on [{}, {}]",
            grid.spacing, limit, grid.phi_min, grid.phi_max
        )));
    }
    let phi = grid.points();
    let k = momentum_symbol(grid, scheme);
    // The unpaired Nyquist mode of an even grid would make n fail to be odd
    // under phi -> -phi; the kinetic term keeps it.
    let mut n_symbol = k.clone();
    if grid.n_points % 2 == 0 {
        n_symbol[grid.n_points / 2] = T::zero();
    }
    let half = T::of(0.5);
    let zeros = vec![T::zero(); grid.n_points];
    let phi_op = Operator::real_parts(phi.clone(), zeros.clone());
    let n_op = Operator::real_parts(zeros.clone(), n_symbol.clone());
    let kinetic = Operator::real_parts(zeros, k.iter().map(|&s| half * kinetic_coeff * s * s).collect());
    let r = T::one() / T::SQRT_2();
    let annihilation = Operator {
        position: phi.iter().map(|&x| Complex::new(x / lambda * r, T::zero())).collect(),
        momentum: n_symbol.iter().map(|&s| Complex::new(T::zero(), lambda * s * r)).collect(),
    };
    Ok(OperatorSet {
        grid: *grid,
        scheme,
        phi,
        n_symbol,
        kinetic_coeff,
        lambda,
        potential,
        phi_op,
        n_op,
        kinetic,
        annihilation,
        fft: Transforms::new(grid.n_points),
    })
}

impl<T: Real> OperatorSet<T> {
    pub fn dim(&self) -> usize {
        self.grid.n_points
    }

    /// Potential U(phi_i; bias) - E_L drive_phi0 phi_i on the grid, rad/ns.
    pub fn potential_diagonal(&self, bias: &FluxBias<T>, drive_phi0: T) -> Vec<T> {
        let tilt = self.potential.e_l * drive_phi0;
        self.phi.iter().map(|&x| self.potential.value(bias, x) - tilt * x).collect()
    }

    /// O psi.
    pub fn apply(&self, op: &Operator<T>, psi: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
        let n = self.dim();
        if op.dim() != n || psi.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: psi.len().min(op.dim()) });
        }
        let mut fft = self.fft.clone();
        let mut m = psi.to_vec();
        fft.apply_momentum(&mut m, &op.momentum);
        for ((out, x), p) in m.iter_mut().zip(psi).zip(&op.position) {
            *out += *x * *p;
        }
        Ok(m)
    }

    /// Dense row-major matrix of `op`.
    pub fn to_dense(&self, op: &Operator<T>) -> Vec<Complex<T>> {
        let n = self.dim();
        let mut out = vec![Complex::new(T::zero(), T::zero()); n * n];
        let mut e = vec![Complex::new(T::zero(), T::zero()); n];
        for j in 0..n {
            e.iter_mut().for_each(|z| *z = Complex::new(T::zero(), T::zero()));
            e[j] = Complex::new(T::one(), T::zero());
            let col = self.apply(op, &e).expect("dimensions agree");
            for i in 0..n {
                out[i * n + j] = col[i];
            }
        }
        out
    }

    /// Diagonal of F rho F^dagger (momentum-space populations).
    pub fn momentum_populations(&self, rho: &[Complex<T>]) -> Vec<T> {
        let n = self.dim();
        let mut fft = self.fft.clone();
        let mut m = rho.to_vec();
        // rows: rho F^dagger (unnormalized), then columns via transposition.
        fft.inverse(&mut m);
        let mut t = vec![Complex::new(T::zero(), T::zero()); n * n];
        super::spectral::transpose(&m, &mut t, n);
        fft.forward(&mut t);
        let norm = T::one() / T::of(n as f64);
        (0..n).map(|k| t[k * n + k].re * norm).collect()
    }

    pub fn expectation(&self, state: &QuantumState<T>, op: &Operator<T>) -> Result<Expectation<T>> {
        let n = self.dim();
        if state.dim() != n || op.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, got: state.dim().min(op.dim()) });
        }
        let value = match &state.data {
            StateData::Pure(psi) => {
                let o = self.apply(op, psi)?;
                psi.iter().zip(&o).map(|(a, b)| a.conj() * b).fold(Complex::new(T::zero(), T::zero()), |s, x| s + x)
            }
            StateData::Density(rho) => {
                let zero = Complex::new(T::zero(), T::zero());
                let mut acc = zero;
                for i in 0..n {
                    acc += op.position[i] * rho.data[i * n + i];
                }
                if op.momentum.iter().any(|z| *z != zero) {
                    let pk = self.momentum_populations(&rho.data);
                    for (m, p) in op.momentum.iter().zip(pk) {
                        acc += *m * p;
                    }
                }
                acc
            }
        };
        Ok(Expectation { value: value.re, imag_residue: value.im.abs() })
    }
}

/// H = kinetic + diag(U(phi_i; bias)) - E_L drive_phi0 phi, rad/ns.
pub fn build_hamiltonian<T: Real>(ops: &OperatorSet<T>, bias: &FluxBias<T>, drive_phi0: T) -> Operator<T> {
    Operator {
        position: ops.potential_diagonal(bias, drive_phi0).into_iter().map(|v| Complex::new(v, T::zero())).collect(),
        momentum: ops.kinetic.momentum.clone(),
    }
}
