//! Lumped circuit model: device parameters, derived energy scales, flux-bias
//! conversions and the readout resonator.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::potential::{analyze_shape, PotentialCoefficients, ShapeOptions};
use crate::scalar::Real;
use crate::units::*;

/// Junction and loop parameters. Currents in uA, inductances in pH,
/// capacitance in fF.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceParams<T> {
    /// Critical current of junction 1.
    pub ic1: T,
    /// Critical current of junction 2.
    pub ic2: T,
    /// Central (shunt) inductance L.
    pub l_center: T,
    /// Total junction capacitance C_sum = C1 + C2.
    pub c_junction_total: T,
    /// Per-branch stray inductance. Not part of the Hamiltonian.
    #[serde(default)]
    pub l_stray: T,
}

impl<T: Real> DeviceParams<T> {
    /// Reference device: two 5.4 uA junctions, 220 pH, 78 fF in total.
    pub fn reference() -> Self {
        Self::symmetric(T::of(5.4), T::of(220.0), T::of(78.0))
    }

    pub fn cast<U: Real>(&self) -> DeviceParams<U> {
        DeviceParams {
            ic1: U::of(self.ic1.f64()),
            ic2: U::of(self.ic2.f64()),
            l_center: U::of(self.l_center.f64()),
            c_junction_total: U::of(self.c_junction_total.f64()),
            l_stray: U::of(self.l_stray.f64()),
        }
    }

    pub fn symmetric(ic: T, l_center: T, c_junction_total: T) -> Self {
        Self { ic1: ic, ic2: ic, l_center, c_junction_total, l_stray: T::zero() }
    }

    /// Device with I_c+ = ic1 + ic2 = `ic_plus` and I_c- / I_c+ = `ratio`.
    pub fn asymmetric(ic_plus: T, ratio: T, l_center: T, c_junction_total: T) -> Self {
        let half = ic_plus / T::of(2.0);
        Self {
            ic1: half * (T::one() + ratio),
            ic2: half * (T::one() - ratio),
            l_center,
            c_junction_total,
            l_stray: T::zero(),
        }
    }

    /// I_c+ = I_c1 + I_c2.
    pub fn ic_plus(&self) -> T {
        self.ic1 + self.ic2
    }

    /// I_c- = I_c1 - I_c2.
    pub fn ic_minus(&self) -> T {
        self.ic1 - self.ic2
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: T, name: &str| {
            if v.is_finite() && v > T::zero() {
                Ok(())
            } else {
                Err(domain(format!("{name} must be positive and finite, got {v}")))
            }
        };
        positive(self.ic1, "ic1")?;
        positive(self.ic2, "ic2")?;
        positive(self.l_center, "l_center")?;
        positive(self.c_junction_total, "c_junction_total")?;
        if !(self.l_stray.is_finite() && self.l_stray >= T::zero()) {
            return Err(domain(format!("l_stray must be non-negative, got {}", self.l_stray)));
        }
        Ok(())
    }
}

/// Energy scales derived from [`DeviceParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyScales<T> {
    /// Inductive energy (Phi0/2pi)^2 / L, h*GHz.
    pub e_l: T,
    /// Josephson energy of one junction at the mean critical current, h*GHz.
    pub e_j: T,
    /// Charging energy e^2 / (2 C_sum), h*GHz. The kinetic term is 4 E_C n^2.
    pub e_c: T,
    /// Screening parameter 2 pi L I_c / Phi0 at the mean critical current.
    pub beta_l: T,
    /// Bare LC angular frequency, rad/ns.
    pub omega0: T,
    /// Characteristic impedance sqrt(L / C_sum), ohm.
    pub z0: T,
    /// Ground-state width parameter 2e sqrt(2 Z0 / hbar), rad.
    pub sigma: T,
    /// Bias current that shifts the loop phase by one radian, Phi0/(2 pi L), uA.
    pub current_per_phase: T,
}

impl<T: Real> EnergyScales<T> {
    /// LC frequency in GHz.
    pub fn f_lc(&self) -> T {
        self.omega0 / T::TAU()
    }
}

pub fn derive_energies<T: Real>(params: &DeviceParams<T>) -> Result<EnergyScales<T>> {
    params.validate()?;
    let l = params.l_center.f64() * PICO;
    let c = params.c_junction_total.f64() * FEMTO;
    let ic = 0.5 * (params.ic1.f64() + params.ic2.f64()) * MICRO;
    let z0 = (l / c).sqrt();
    let s = EnergyScales {
        e_l: joule_to_ghz(REDUCED_FLUX_QUANTUM * REDUCED_FLUX_QUANTUM / l),
        e_j: joule_to_ghz(REDUCED_FLUX_QUANTUM * ic),
        e_c: joule_to_ghz(ELEMENTARY_CHARGE * ELEMENTARY_CHARGE / (2.0 * c)),
        beta_l: ic * l / REDUCED_FLUX_QUANTUM,
        omega0: 1.0 / (l * c).sqrt() * NANO,
        z0,
        sigma: 2.0 * ELEMENTARY_CHARGE * (2.0 * z0 / HBAR).sqrt(),
        current_per_phase: REDUCED_FLUX_QUANTUM / l / MICRO,
    };
    Ok(EnergyScales {
        e_l: T::of(s.e_l),
        e_j: T::of(s.e_j),
        e_c: T::of(s.e_c),
        beta_l: T::of(s.beta_l),
        omega0: T::of(s.omega0),
        z0: T::of(s.z0),
        sigma: T::of(s.sigma),
        current_per_phase: T::of(s.current_per_phase),
    })
}

/// Flux bias of the two loops expressed as phi+ = (phi1 + phi2)/2 and
/// phi- = (phi1 - phi2)/2, in rad.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluxBias<T> {
    pub phi_plus: T,
    pub phi_minus: T,
}

impl<T: Real> FluxBias<T> {
    pub fn new(phi_plus: T, phi_minus: T) -> Self {
        Self { phi_plus, phi_minus }
    }

    pub fn from_loop_phases(phi1: T, phi2: T) -> Self {
        let half = T::of(0.5);
        Self { phi_plus: half * (phi1 + phi2), phi_minus: half * (phi1 - phi2) }
    }

    /// (phi1, phi2).
    pub fn loop_phases(&self) -> (T, T) {
        (self.phi_plus + self.phi_minus, self.phi_plus - self.phi_minus)
    }

    pub fn cast<U: Real>(&self) -> FluxBias<U> {
        FluxBias { phi_plus: U::of(self.phi_plus.f64()), phi_minus: U::of(self.phi_minus.f64()) }
    }
}

/// Mutual inductances (pH) between the two bias lines and the two loops.
///
/// phi1 = 2 pi (M_dir I1 + M_opp I2) / Phi0 and
/// phi2 = 2 pi (-M_opp I1 - M_dir I2) / Phi0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MutualMatrix<T> {
    pub m_dir: T,
    pub m_opp: T,
}

impl<T: Real> MutualMatrix<T> {
    pub fn is_invertible(&self) -> bool {
        let d = self.m_dir * self.m_dir - self.m_opp * self.m_opp;
        d.abs() > T::tiny() * (self.m_dir.abs() + self.m_opp.abs()).powi(2)
    }
}

/// rad per (pH * uA).
fn phase_per_flux<T: Real>() -> T {
    T::of(PICO * MICRO / REDUCED_FLUX_QUANTUM)
}

/// Loop bias produced by line currents `i1`, `i2` (uA).
pub fn bias_from_currents<T: Real>(m: &MutualMatrix<T>, i1: T, i2: T) -> FluxBias<T> {
    let k = phase_per_flux::<T>();
    let phi1 = k * (m.m_dir * i1 + m.m_opp * i2);
    let phi2 = -k * (m.m_opp * i1 + m.m_dir * i2);
    FluxBias::from_loop_phases(phi1, phi2)
}

/// Line currents (uA) that realize `bias`.
pub fn currents_for_bias<T: Real>(m: &MutualMatrix<T>, bias: &FluxBias<T>) -> Result<(T, T)> {
    if !m.is_invertible() {
        return Err(domain(format!(
            "mutual matrix is singular (|m_dir| = |m_opp| = {})",
            m.m_dir.abs()
        )));
    }
    let k = phase_per_flux::<T>();
    let (phi1, phi2) = bias.loop_phases();
    // [m_dir  m_opp; -m_opp -m_dir] [i1; i2] = [phi1; phi2] / k
    let (a, b, c, d) = (m.m_dir, m.m_opp, -m.m_opp, -m.m_dir);
    let det = a * d - b * c;
    let (r1, r2) = (phi1 / k, phi2 / k);
    Ok(((d * r1 - b * r2) / det, (a * r2 - c * r1) / det))
}

/// Readout resonator elements: series inductance (pH), coupling and parallel
/// capacitances (fF).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResonatorParams<T> {
    pub l_series: T,
    pub c_coupling: T,
    pub c_parallel: T,
}

impl<T: Real> ResonatorParams<T> {
    /// L_s = 300 pH, C_c = 100 fF, C_par = 1.4 pF.
    pub fn reference() -> Self {
        Self { l_series: T::of(300.0), c_coupling: T::of(100.0), c_parallel: T::of(1400.0) }
    }

    pub fn validate(&self) -> Result<()> {
        for (v, name) in [
            (self.l_series, "l_series"),
            (self.c_coupling, "c_coupling"),
            (self.c_parallel, "c_parallel"),
        ] {
            if !(v.is_finite() && v >= T::zero()) {
                return Err(domain(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.c_coupling + self.c_parallel <= T::zero() {
            return Err(domain("resonator needs a non-zero capacitance"));
        }
        Ok(())
    }
}

/// Which potential minimum sets the effective inductance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WellSelect {
    /// Lowest minimum; the left one when two are degenerate.
    #[default]
    Global,
    Left,
    Right,
}

/// Small-signal inductance (pH) at the selected minimum,
/// L_eff = (Phi0/2pi)^2 / U''(phi_min).
pub fn effective_inductance<T: Real>(
    params: &DeviceParams<T>,
    bias: &FluxBias<T>,
    well: WellSelect,
) -> Result<T> {
    params.validate()?;
    let coeffs = PotentialCoefficients::from_params(params)?;
    let shape = analyze_shape(&coeffs, bias, &ShapeOptions::default())?;
    let minimum = match well {
        WellSelect::Global => shape.global_minimum(),
        WellSelect::Left => shape.minima.first(),
        WellSelect::Right => shape.minima.last(),
    }
    .ok_or_else(|| Error::Internal("potential has no minimum".into()))?;
    let curvature = minimum.curvature;
    if curvature <= T::zero() {
        return Err(Error::Internal("minimum with non-positive curvature".into()));
    }
    Ok(params.l_center * coeffs.e_l / curvature)
}

/// Resonance frequency (GHz) of the readout circuit
/// 1 / (2 pi sqrt((C_c + C_par)(L_eff + L_s))).
pub fn readout_frequency<T: Real>(
    params: &DeviceParams<T>,
    resonator: &ResonatorParams<T>,
    bias: &FluxBias<T>,
    well: WellSelect,
) -> Result<T> {
    resonator.validate()?;
    let l_eff = effective_inductance(params, bias, well)?;
    let l = (l_eff + resonator.l_series).f64() * PICO;
    let c = (resonator.c_coupling + resonator.c_parallel).f64() * FEMTO;
    Ok(T::of(1.0 / (2.0 * std::f64::consts::PI * (l * c).sqrt()) * NANO))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn reference_scales_match_closed_forms() {
        let s = derive_energies(&DeviceParams::<f64>::reference()).unwrap();
        // Independent evaluation with rounded textbook constants.
        let phi0 = 2.067_833_848e-15_f64;
        let h = 6.626_070_15e-34;
        let el = (phi0 / (2.0 * PI)).powi(2) / 220e-12 / h / 1e9;
        let ej = phi0 / (2.0 * PI) * 5.4e-6 / h / 1e9;
        assert_relative_eq!(s.e_l, el, max_relative = 1e-8);
        assert_relative_eq!(s.e_j, ej, max_relative = 1e-8);
        assert_relative_eq!(s.e_l, 743.0, max_relative = 2e-3);
        assert_relative_eq!(s.e_j, 2682.0, max_relative = 2e-3);
        assert_relative_eq!(2.0 * s.beta_l, 2.0 * ej / el, max_relative = 1e-9);
        assert_relative_eq!(s.sigma, 0.3216, max_relative = 1e-3);
        assert_relative_eq!(s.f_lc(), 38.42, max_relative = 1e-3);
        assert_relative_eq!(s.current_per_phase, 1.496, max_relative = 1e-3);
    }

    #[test]
    fn rejects_nonpositive_inputs() {
        let mut p = DeviceParams::<f64>::reference();
        p.l_center = -1.0;
        assert!(matches!(derive_energies(&p), Err(Error::Domain(_))));
        let mut p = DeviceParams::<f64>::reference();
        p.ic2 = 0.0;
        assert!(derive_energies(&p).is_err());
    }

    #[test]
    fn asymmetric_constructor() {
        let p = DeviceParams::<f64>::asymmetric(9.0, 0.11, 220.0, 78.0);
        assert_relative_eq!(p.ic_plus(), 9.0, epsilon = 1e-12);
        assert_relative_eq!(p.ic_minus() / p.ic_plus(), 0.11, epsilon = 1e-12);
    }

    #[test]
    fn loop_phase_roundtrip() {
        let b = FluxBias::from_loop_phases(1.3, -0.4);
        let (p1, p2) = b.loop_phases();
        assert_relative_eq!(p1, 1.3, epsilon = 1e-15);
        assert_relative_eq!(p2, -0.4, epsilon = 1e-15);
    }

    #[test]
    fn equal_and_opposite_currents() {
        let m = MutualMatrix { m_dir: 5.0f64, m_opp: 1.0 };
        assert!(bias_from_currents(&m, 70.0, 70.0).phi_plus.abs() < 1e-14);
        assert!(bias_from_currents(&m, 70.0, -70.0).phi_minus.abs() < 1e-14);
        let singular = MutualMatrix { m_dir: 2.0, m_opp: -2.0 };
        assert!(currents_for_bias(&singular, &FluxBias::new(1.0, 0.0)).is_err());
    }

    #[test]
    fn inductance_at_the_flux_extremes() {
        // I_c chosen so that 2 beta_L = 7 exactly.
        let ic = 7.0 * REDUCED_FLUX_QUANTUM / (2.0 * 220e-12) / MICRO;
        let p = DeviceParams::symmetric(ic, 220.0, 78.0);
        let l0 = effective_inductance(&p, &FluxBias::new(0.0, 0.0), WellSelect::Global).unwrap();
        assert_relative_eq!(l0, 220.0 / 8.0, max_relative = 1e-9);
        let lh = effective_inductance(&p, &FluxBias::new(PI / 2.0, 0.0), WellSelect::Global).unwrap();
        assert_relative_eq!(lh, 220.0, max_relative = 1e-9);
        let lpi = effective_inductance(&p, &FluxBias::new(PI, 0.0), WellSelect::Left).unwrap();
        // phi_m solves phi = 7 sin(phi); L / (1 - 7 cos(phi_m)).
        let mut x = 2.7_f64;
        for _ in 0..60 {
            x -= (x - 7.0 * x.sin()) / (1.0 - 7.0 * x.cos());
        }
        assert_relative_eq!(lpi, 220.0 / (1.0 - 7.0 * x.cos()), max_relative = 1e-7);
        assert_relative_eq!(lpi, 29.6, max_relative = 5e-3);
    }

    #[test]
    fn readout_in_the_harmonic_configuration() {
        let p = DeviceParams::<f64>::reference();
        let f = readout_frequency(&p, &ResonatorParams::reference(), &FluxBias::new(PI / 2.0, 0.0), WellSelect::Global)
            .unwrap();
        assert_relative_eq!(f, 1.0 / (2.0 * PI * (1.5e-12 * 520e-12_f64).sqrt()) / 1e9, max_relative = 1e-9);
    }

    #[test]
    fn readout_ordering_across_bias() {
        let p = DeviceParams::<f64>::reference();
        let r = ResonatorParams::reference();
        let f = |pp: f64| readout_frequency(&p, &r, &FluxBias::new(pp, 0.0), WellSelect::Global).unwrap();
        assert!(f(0.0) > f(PI));
        assert!(f(PI) > f(PI / 2.0));
    }

    #[test]
    fn generic_f32_path() {
        let s = derive_energies(&DeviceParams::<f32>::reference()).unwrap();
        assert!((s.e_l - 743.0).abs() < 1.0);
    }

    proptest! {
        #[test]
        fn doubling_l_scales_el_and_beta(l in 20.0f64..2000.0, ic in 0.5f64..50.0) {
            let a = derive_energies(&DeviceParams::symmetric(ic, l, 78.0)).unwrap();
            let b = derive_energies(&DeviceParams::symmetric(ic, 2.0 * l, 78.0)).unwrap();
            prop_assert!((b.e_l / a.e_l - 0.5).abs() < 1e-12);
            prop_assert!((b.beta_l / a.beta_l - 2.0).abs() < 1e-12);
        }

        #[test]
        fn currents_invert_bias(m_dir in 1.0f64..20.0, m_opp in -0.9f64..0.9,
                                pp in -4.0f64..4.0, pm in -4.0f64..4.0) {
            let m = MutualMatrix { m_dir, m_opp: m_opp * m_dir };
            let bias = FluxBias::new(pp, pm);
            let (i1, i2) = currents_for_bias(&m, &bias).unwrap();
            let back = bias_from_currents(&m, i1, i2);
            prop_assert!((back.phi_plus - pp).abs() < 1e-9);
            prop_assert!((back.phi_minus - pm).abs() < 1e-9);
        }
    }
}
