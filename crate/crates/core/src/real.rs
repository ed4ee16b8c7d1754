use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, ToPrimitive};

/// Floating point scalar used throughout the numeric code.
///
/// Implemented for `f32` (the default compute type) and `f64` (gradient
/// checks and finite-difference oracles).
pub trait Real:
    Float
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + 'static
{
    fn lit(x: f64) -> Self;

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn widen(x: f32) -> Self;
    fn to_f32_lossy(self) -> f32;
}

impl Real for f32 {
    #[inline(always)]
    fn lit(x: f64) -> Self {
        x as f32
    }
    #[inline(always)]
    fn widen(x: f32) -> Self {
        x
    }
    #[inline(always)]
    fn to_f32_lossy(self) -> f32 {
        self
    }
}

impl Real for f64 {
    #[inline(always)]
    fn lit(x: f64) -> Self {
        x
    }
    #[inline(always)]
    fn widen(x: f32) -> Self {
        x as f64
    }
    #[inline(always)]
    fn to_f32_lossy(self) -> f32 {
        self as f32
    }
}
