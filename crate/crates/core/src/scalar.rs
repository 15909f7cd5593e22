//! Scalar abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real scalar used throughout the geometry and network code: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn lit(v: f64) -> Self;

    fn as_f64(self) -> f64;

    fn from_count(n: usize) -> Self {
        Self::lit(n as f64)
    }

    /// Native little-endian bytes, used for weight checksums.
    fn le_bytes(self) -> Vec<u8>;
}

impl Real for f32 {
    #[inline]
    fn lit(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn le_bytes(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }
}

impl Real for f64 {
    #[inline]
    fn lit(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    fn le_bytes(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn halve<T: Real>(x: T) -> T {
        x * T::lit(0.5)
    }

    #[test]
    fn generic_over_both_widths() {
        assert_eq!(halve(3.0f32), 1.5f32);
        assert_eq!(halve(3.0f64), 1.5f64);
        assert_eq!(<f64 as Real>::from_count(7), 7.0);
    }
}
