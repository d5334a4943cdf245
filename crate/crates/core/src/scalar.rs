//! Floating-point scalar abstraction used by the probability kernels.
//!
//! The calibration math is written once over [`Scalar`] and instantiated for
//! `f64` (the default everywhere in the engine) and `f32` (useful for
//! memory-bound experiments, but too coarse for the 1e-9 oracle tolerances).

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// floating point: f32 or f64
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Sum + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal or parameter.
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("f64 converts to every Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }

    /// Absolute tolerance for the sum-to-one check on a vector of `len` entries.
    fn sum_tolerance(len: usize) -> Self {
        let floor = Self::of(1e-9);
        let accumulated = Self::epsilon() * Self::of(len.max(1) as f64) * Self::of(4.0);
        floor.max(accumulated)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
