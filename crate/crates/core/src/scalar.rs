//! Scalar abstraction shared by every model in the crate.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point type the physics is written against.
///
/// Implemented for `f32` and `f64`. Everything in this crate is generic over
/// it; the crate root exports `f64` aliases for the common case.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal. Panics only if the target type cannot hold a
    /// finite approximation, which never happens for `f32`/`f64`.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("scalar literal out of range")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl<T> Scalar for T where
    T: Float
        + FloatConst
        + FromPrimitive
        + ToPrimitive
        + Debug
        + Display
        + Default
        + Send
        + Sync
        + 'static
{
}

/// Vacuum speed of light in m/s (exact SI value).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub(crate) fn speed_of_light<T: Scalar>() -> T {
    T::lit(SPEED_OF_LIGHT)
}
