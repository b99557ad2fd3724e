//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! Production runs use `f32`; gradient verification and the oracle tests use
//! `f64`. Nothing outside this module should care which one it gets.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + AddAssign + SubAssign + MulAssign + DivAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Size of the little-endian encoding in bytes.
    const BYTES: usize;

    /// Converts an `f64` literal; exact for `f64`, rounded for `f32`.
    fn lit(v: f64) -> Self;

    fn as_f64(self) -> f64;

    fn write_le(self, out: &mut Vec<u8>);

    /// Decodes from exactly `Self::BYTES` little-endian bytes.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const BYTES: usize = 4;

    #[inline(always)]
    fn lit(v: f64) -> Self {
        v as f32
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"))
    }
}

impl Real for f64 {
    const BYTES: usize = 8;

    #[inline(always)]
    fn lit(v: f64) -> Self {
        v
    }

    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().expect("8 bytes"))
    }
}

/// Shorthand for [`Real::lit`].
#[inline(always)]
pub fn lit<T: Real>(v: f64) -> T {
    T::lit(v)
}

#[inline(always)]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}
