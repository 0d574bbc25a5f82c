//! Scalar abstraction the numeric kernels are generic over.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar for model arithmetic. Implemented by `f32` and `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant, rounding if the target is narrower.
    fn from_f64_lossy(value: f64) -> Self {
        Self::from_f64(value).expect("every finite f64 converts into a Scalar")
    }

    /// Widens to `f64` for reporting and statistics.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("every Scalar widens to f64")
    }
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + NumAssign
        + Sum
        + Debug
        + Display
        + Default
        + Send
        + Sync
        + 'static
{
}
