//! Floating point abstraction shared by the numerical kernels.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use rustfft::FftNum;

/// Real scalar used by the circuit, potential, quantum and classical kernels.
///
/// Implemented for `f32` and `f64`. Control-plane code (schedules, sweeps,
/// output) stays in `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + FftNum
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from `f64`.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to every Real")
    }

    /// Conversion to `f64`.
    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("Real converts to f64")
    }

    /// Machine epsilon scaled to something usable as an absolute floor.
    #[inline]
    fn tiny() -> Self {
        Self::epsilon() * Self::of(16.0)
    }
}

impl Real for f32 {}
impl Real for f64 {}
