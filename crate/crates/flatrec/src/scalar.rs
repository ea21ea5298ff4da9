//! Scalar abstraction the numeric core is generic over.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point scalar type used throughout the library.
///
/// Implemented automatically for any type satisfying the bounds; in practice
/// that means `f32` and `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Display
    + Debug
    + Send
    + Sync
    + 'static
{
    /// Converts a count into the scalar type.
    ///
    /// Counts in this crate are profile and dataset sizes, far below the
    /// exact-integer limit of `f32`, so the conversion is lossless in practice.
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).unwrap_or_else(Self::max_value)
    }

    fn half() -> Self {
        Self::from_f64(0.5).unwrap()
    }

    fn two() -> Self {
        Self::from_f64(2.0).unwrap()
    }

    fn hundred() -> Self {
        Self::from_f64(100.0).unwrap()
    }
}

impl<T> Scalar for T where
    T: Float
        + FromPrimitive
        + ToPrimitive
        + NumAssign
        + Sum
        + Display
        + Debug
        + Send
        + Sync
        + 'static
{
}
