use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::scalar::Real;

/// Uniform phase grid including both end points.
///
/// Spectral operators treat it as periodic with period n_points * spacing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseGrid<T> {
    pub phi_min: T,
    pub phi_max: T,
    pub n_points: usize,
    pub spacing: T,
}

pub const MIN_POINTS: usize = 32;

impl<T: Real> PhaseGrid<T> {
    pub fn new(phi_min: T, phi_max: T, n_points: usize) -> Result<Self> {
        if n_points < MIN_POINTS {
            return Err(domain(format!("grid needs at least {MIN_POINTS} points, got {n_points}")));
        }
        if !(phi_min.is_finite() && phi_max.is_finite() && phi_max > phi_min) {
            return Err(domain(format!("grid bounds [{phi_min}, {phi_max}] are not an interval")));
        }
        let spacing = (phi_max - phi_min) / T::of((n_points - 1) as f64);
        Ok(Self { phi_min, phi_max, n_points, spacing })
    }

    pub fn symmetric(half_width: T, n_points: usize) -> Result<Self> {
        Self::new(-half_width, half_width, n_points)
    }

    pub fn point(&self, i: usize) -> T {
        // Written around the centre so that a symmetric grid is mirror-exact.
        let half = T::of(0.5);
        let (c, h) = ((self.phi_min + self.phi_max) * half, (self.phi_max - self.phi_min) * half);
        let m = (2 * i) as f64 - (self.n_points - 1) as f64;
        c + h * (T::of(m) / T::of((self.n_points - 1) as f64))
    }

    pub fn points(&self) -> Vec<T> {
        (0..self.n_points).map(|i| self.point(i)).collect()
    }

    /// Angular wavenumbers in FFT order, 2 pi fftfreq(n, spacing).
    pub fn wavenumbers(&self) -> Vec<T> {
        let n = self.n_points;
        let scale = T::TAU() / (T::of(n as f64) * self.spacing);
        (0..n)
            .map(|j| {
                let m = if j < n.div_ceil(2) { j as f64 } else { j as f64 - n as f64 };
                T::of(m) * scale
            })
            .collect()
    }

    pub fn is_symmetric(&self) -> bool {
        (self.phi_min + self.phi_max).abs() <= T::tiny() * self.phi_max.abs()
    }

    /// Same bounds, twice the resolution.
    pub fn refined(&self) -> Self {
        Self::new(self.phi_min, self.phi_max, 2 * (self.n_points - 1) + 1).expect("refining a valid grid")
    }

    pub fn cast<U: Real>(&self) -> PhaseGrid<U> {
        PhaseGrid::new(U::of(self.phi_min.f64()), U::of(self.phi_max.f64()), self.n_points)
            .expect("casting a valid grid")
    }
}

impl<T: Real> Default for PhaseGrid<T> {
    fn default() -> Self {
        Self::symmetric(T::of(4.5), 128).expect("default grid is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_and_symmetry() {
        let g = PhaseGrid::<f64>::symmetric(4.5, 128).unwrap();
        assert!((g.spacing - 9.0 / 127.0).abs() < 1e-15);
        let p = g.points();
        for i in 0..128 {
            assert_eq!(p[i], -p[127 - i]);
        }
        assert!(g.is_symmetric());
        assert!(PhaseGrid::<f64>::symmetric(4.5, 16).is_err());
        assert!(PhaseGrid::<f64>::new(1.0, 1.0, 64).is_err());
    }

    #[test]
    fn wavenumbers_follow_fft_order() {
        let g = PhaseGrid::<f64>::symmetric(3.0, 32).unwrap();
        let k = g.wavenumbers();
        let dk = std::f64::consts::TAU / (32.0 * g.spacing);
        assert_eq!(k[0], 0.0);
        assert!((k[1] - dk).abs() < 1e-12);
        assert!((k[16] + 16.0 * dk).abs() < 1e-12);
        assert!((k[31] + dk).abs() < 1e-12);
    }
}
