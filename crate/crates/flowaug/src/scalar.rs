//! Precision abstraction.
//!
//! Every numeric component is generic over [`Scalar`], which is implemented
//! for `f32` and `f64`. Correctness-sensitive paths (oracle tests, metrics,
//! checksummed checkpoints) run in `f64`; `f32` exists for training speed and
//! round-trips through checkpoints bit-exactly in its own width.

use std::fmt::{Debug, Display};

/// Floating-point element type for tensors, models, and optimizers.
///
/// The supertraits pull in arithmetic, comparisons, and the elementary
/// functions (`exp`, `ln`, `tanh`, ...) via `num_traits::Float`.
pub trait Scalar:
    num_traits::Float + Debug + Display + Default + Send + Sync + 'static
{
    /// Short name used in configs, checkpoints, and error messages.
    const NAME: &'static str;

    /// Width of one element in bytes (4 or 8).
    const BYTES: usize;

    /// Narrowing conversion from `f64` (rounds to nearest for `f32`).
    fn narrow(v: f64) -> Self;

    /// Widening conversion to `f64` (exact for both widths).
    fn widen(self) -> f64;

    /// Appends the little-endian byte encoding of `self` to `out`.
    fn write_le(self, out: &mut Vec<u8>);

    /// Decodes one value from exactly [`Self::BYTES`] little-endian bytes.
    ///
    /// Panics if `bytes.len() != Self::BYTES`; callers slice exactly.
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";
    const BYTES: usize = 4;

    #[inline]
    fn narrow(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn widen(self) -> f64 {
        self as f64
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("f32 needs 4 bytes"))
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";
    const BYTES: usize = 8;

    #[inline]
    fn narrow(v: f64) -> Self {
        v
    }

    #[inline]
    fn widen(self) -> f64 {
        self
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("f64 needs 8 bytes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_are_bit_exact() {
        let vals = [0.0f64, -1.5, 3.141592653589793, f64::MIN_POSITIVE, 1e300];
        for &v in &vals {
            let mut buf = Vec::new();
            v.write_le(&mut buf);
            assert_eq!(f64::read_le(&buf).to_bits(), v.to_bits());
        }
        let vals32 = [0.0f32, -1.5, 3.2e-30, 7.5e30];
        for &v in &vals32 {
            let mut buf = Vec::new();
            v.write_le(&mut buf);
            assert_eq!(f32::read_le(&buf).to_bits(), v.to_bits());
        }
    }

    #[test]
    fn names_and_widths() {
        assert_eq!(f32::NAME, "f32");
        assert_eq!(f64::NAME, "f64");
        assert_eq!(f32::BYTES, 4);
        assert_eq!(f64::BYTES, 8);
    }
}
