//! Loop potential and its static analysis.
//!
//! U(phi) = E_L phi^2 / 2 - E_J+ cos(phi+) cos(phi + phi-) + E_J- sin(phi+) sin(phi + phi-)
//!
//! with E_J+- = (Phi0 / 2pi) I_c+-. Energies here are in h*GHz.

use serde::{Deserialize, Serialize};

use crate::circuit::{derive_energies, DeviceParams, FluxBias};
use crate::error::{domain, Error, Result};
use crate::scalar::Real;
use crate::units::{joule_to_ghz, MICRO, REDUCED_FLUX_QUANTUM};

/// Coefficients of the loop potential, h*GHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialCoefficients<T> {
    pub e_l: T,
    /// (Phi0 / 2pi) (I_c1 + I_c2).
    pub e_j_plus: T,
    /// (Phi0 / 2pi) (I_c1 - I_c2).
    pub e_j_minus: T,
    /// LC frequency, GHz. Converts curvature into a local frequency.
    pub f_lc: T,
}

impl<T: Real> PotentialCoefficients<T> {
    pub fn from_params(params: &DeviceParams<T>) -> Result<Self> {
        let s = derive_energies(params)?;
        let ej = |ic: T| T::of(joule_to_ghz(REDUCED_FLUX_QUANTUM * ic.f64() * MICRO));
        Ok(Self {
            e_l: s.e_l,
            e_j_plus: ej(params.ic_plus()),
            e_j_minus: ej(params.ic_minus()),
            f_lc: s.f_lc(),
        })
    }

    /// Josephson prefactors (a, b) with U_J = -a cos(phi + phi-) + b sin(phi + phi-).
    #[inline]
    fn josephson(&self, bias: &FluxBias<T>) -> (T, T) {
        let (s, c) = bias.phi_plus.sin_cos();
        (self.e_j_plus * c, self.e_j_minus * s)
    }

    /// Amplitude R of the Josephson term, U_J = -R cos(phi + phi- + delta).
    pub fn josephson_amplitude(&self, bias: &FluxBias<T>) -> T {
        let (a, b) = self.josephson(bias);
        a.hypot(b)
    }

    #[inline]
    pub fn value(&self, bias: &FluxBias<T>, phi: T) -> T {
        let (a, b) = self.josephson(bias);
        let (s, c) = (phi + bias.phi_minus).sin_cos();
        self.e_l * phi * phi * T::of(0.5) - a * c + b * s
    }

    #[inline]
    pub fn first_derivative(&self, bias: &FluxBias<T>, phi: T) -> T {
        let (a, b) = self.josephson(bias);
        let (s, c) = (phi + bias.phi_minus).sin_cos();
        self.e_l * phi + a * s + b * c
    }

    #[inline]
    pub fn second_derivative(&self, bias: &FluxBias<T>, phi: T) -> T {
        let (a, b) = self.josephson(bias);
        let (s, c) = (phi + bias.phi_minus).sin_cos();
        self.e_l + a * c - b * s
    }

    /// Small-oscillation frequency (GHz) for curvature `u2` (h*GHz / rad^2).
    pub fn local_frequency(&self, u2: T) -> T {
        self.f_lc * (u2 / self.e_l).max(T::zero()).sqrt()
    }
}

/// U(phi; bias) in h*GHz.
pub fn potential_value<T: Real>(params: &DeviceParams<T>, bias: &FluxBias<T>, phi: T) -> Result<T> {
    if !phi.is_finite() {
        return Err(domain("phase must be finite"));
    }
    Ok(PotentialCoefficients::from_params(params)?.value(bias, phi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    /// The Josephson term vanishes; U is exactly E_L phi^2 / 2.
    Harmonic,
    SingleWell,
    DoubleWell,
    /// More than two minima inside the search window.
    MultiWell,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Minimum<T> {
    pub phi: T,
    pub energy: T,
    /// U'' at the minimum, h*GHz / rad^2.
    pub curvature: T,
    /// f_LC sqrt(U'' / E_L), GHz.
    pub local_frequency: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialShape<T> {
    pub kind: ShapeKind,
    /// Sorted by position.
    pub minima: Vec<Minimum<T>>,
    /// Position of the maximum separating the two wells.
    pub barrier: Option<T>,
    /// U(barrier) minus the energy of the shallower well, h*GHz.
    pub barrier_height: Option<T>,
}

impl<T: Real> PotentialShape<T> {
    /// Lowest minimum, left one when two are degenerate to 1e-9 relative.
    pub fn global_minimum(&self) -> Option<&Minimum<T>> {
        let mut best: Option<&Minimum<T>> = None;
        for m in &self.minima {
            match best {
                None => best = Some(m),
                Some(b) => {
                    let tol = T::of(1e-9) * (b.energy.abs() + m.energy.abs() + T::one());
                    if m.energy < b.energy - tol {
                        best = Some(m);
                    }
                }
            }
        }
        best
    }
}

/// Search settings for [`analyze_shape`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeOptions {
    /// Stationary points are searched in [-window, window], rad.
    pub window: f64,
    /// Scan resolution for sign changes of U', rad.
    pub resolution: f64,
}

impl Default for ShapeOptions {
    fn default() -> Self {
        Self { window: 6.0, resolution: 1e-3 }
    }
}

fn bisect<T: Real>(f: impl Fn(T) -> T, mut lo: T, mut hi: T) -> T {
    let mut flo = f(lo);
    for _ in 0..200 {
        let mid = (lo + hi) * T::of(0.5);
        if (hi - lo).abs() <= T::epsilon() * (T::one() + mid.abs()) * T::of(4.0) {
            return mid;
        }
        let fm = f(mid);
        if fm == T::zero() {
            return mid;
        }
        if (fm < T::zero()) == (flo < T::zero()) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    (lo + hi) * T::of(0.5)
}

/// Stationary points of U inside the window: (phi, is_minimum).
fn stationary_points<T: Real>(
    c: &PotentialCoefficients<T>,
    bias: &FluxBias<T>,
    opts: &ShapeOptions,
) -> Vec<(T, bool)> {
    let n = (2.0 * opts.window / opts.resolution).ceil() as usize;
    let x = |i: usize| T::of(-opts.window + 2.0 * opts.window * i as f64 / n as f64);
    let d = |p: T| c.first_derivative(bias, p);
    let mut out = Vec::new();
    let mut prev = d(x(0));
    for i in 1..=n {
        let (a, b) = (x(i - 1), x(i));
        let cur = d(b);
        // A zero landing exactly on a node is attributed to the interval it closes.
        let crossing = (prev < T::zero() && cur >= T::zero()) || (prev > T::zero() && cur <= T::zero());
        if crossing {
            let root = if cur == T::zero() { b } else { bisect(d, a, b) };
            out.push((root, prev < T::zero()));
        }
        prev = cur;
    }
    out
}

pub fn analyze_shape<T: Real>(
    c: &PotentialCoefficients<T>,
    bias: &FluxBias<T>,
    opts: &ShapeOptions,
) -> Result<PotentialShape<T>> {
    if !(opts.window > 0.0 && opts.resolution > 0.0 && opts.resolution < opts.window) {
        return Err(domain("shape search window and resolution must be positive"));
    }
    if !(bias.phi_plus.is_finite() && bias.phi_minus.is_finite()) {
        return Err(domain("bias must be finite"));
    }
    let points = stationary_points(c, bias, opts);
    let minimum = |phi: T| {
        let u2 = c.second_derivative(bias, phi);
        Minimum { phi, energy: c.value(bias, phi), curvature: u2, local_frequency: c.local_frequency(u2) }
    };
    let minima: Vec<_> = points.iter().filter(|p| p.1).map(|p| minimum(p.0)).collect();
    if minima.is_empty() {
        return Err(Error::Internal(format!("no minimum of U in [-{0}, {0}]", opts.window)));
    }
    let harmonic = c.josephson_amplitude(bias) < T::of(1e-9) * c.e_l;
    let kind = match (harmonic, minima.len()) {
        (true, _) => ShapeKind::Harmonic,
        (false, 1) => ShapeKind::SingleWell,
        (false, 2) => ShapeKind::DoubleWell,
        _ => ShapeKind::MultiWell,
    };
    let (barrier, barrier_height) = if kind == ShapeKind::DoubleWell {
        let (l, r) = (minima[0].phi, minima[1].phi);
        let b = points
            .iter()
            .find(|p| !p.1 && p.0 > l && p.0 < r)
            .map(|p| p.0)
            .ok_or_else(|| Error::Internal("two minima without a maximum between them".into()))?;
        let shallow = minima[0].energy.max(minima[1].energy);
        (Some(b), Some(c.value(bias, b) - shallow))
    } else {
        (None, None)
    };
    Ok(PotentialShape { kind, minima, barrier, barrier_height })
}

/// Convenience wrapper taking device parameters.
pub fn analyze_device<T: Real>(params: &DeviceParams<T>, bias: &FluxBias<T>) -> Result<PotentialShape<T>> {
    analyze_shape(&PotentialCoefficients::from_params(params)?, bias, &ShapeOptions::default())
}
