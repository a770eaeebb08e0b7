//! Physical constants (exact SI 2019 values) and unit conversions.
//!
//! Internally time is in ns and energies are angular frequencies in rad/ns
//! (hbar = 1). Device inputs are in uA, pH and fF; reported energies are in
//! h*GHz.

use std::f64::consts::PI;

/// Planck constant, J s.
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Elementary charge, C.
pub const ELEMENTARY_CHARGE: f64 = 1.602_176_634e-19;
/// Reduced Planck constant, J s.
pub const HBAR: f64 = PLANCK / (2.0 * PI);
/// Superconducting flux quantum h/2e, Wb.
pub const FLUX_QUANTUM: f64 = PLANCK / (2.0 * ELEMENTARY_CHARGE);
/// Reduced flux quantum, Wb per rad.
pub const REDUCED_FLUX_QUANTUM: f64 = FLUX_QUANTUM / (2.0 * PI);

pub const MICRO: f64 = 1e-6;
pub const PICO: f64 = 1e-12;
pub const FEMTO: f64 = 1e-15;
pub const NANO: f64 = 1e-9;

/// Energy in joules to h*GHz.
#[inline]
pub fn joule_to_ghz(e: f64) -> f64 {
    e / PLANCK * NANO
}

/// Energy in joules to rad/ns.
#[inline]
pub fn joule_to_rad_per_ns(e: f64) -> f64 {
    e / HBAR * NANO
}

/// h*GHz to rad/ns.
#[inline]
pub fn ghz_to_rad_per_ns(f: f64) -> f64 {
    2.0 * PI * f
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flux_quantum_value() {
        assert!((FLUX_QUANTUM - 2.067_833_848e-15).abs() < 1e-23);
        assert!((HBAR - 1.054_571_817e-34).abs() < 1e-42);
    }

    #[test]
    fn energy_conversions_agree() {
        let e = 1e-22;
        let via_ghz = ghz_to_rad_per_ns(joule_to_ghz(e));
        assert!((via_ghz / joule_to_rad_per_ns(e) - 1.0).abs() < 1e-14);
    }
}
