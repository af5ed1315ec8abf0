//! Floating-point abstraction shared by the codec, the tensor engine and the metrics.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real scalar the whole crate is generic over.
///
/// Implemented for `f32` and `f64`. Training defaults to `f64`; checkpoints
/// always store parameters widened to 64 bits.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal or computed constant.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn of_usize(v: usize) -> Self {
        Self::from_usize(v).expect("usize is representable in every Scalar")
    }

    #[inline]
    fn to_f64_lossless(self) -> f64 {
        self.to_f64().expect("Scalar widens to f64")
    }

    fn half() -> Self {
        Self::of(0.5)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// `ln(1 + e^x)` without overflow for large `x`.
#[inline]
pub fn softplus<T: Scalar>(x: T) -> T {
    // above 20 the correction term is below f64 epsilon
    if x > T::of(20.0) {
        x
    } else if x < T::of(-20.0) {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_matches_naive_in_safe_range() {
        for &x in &[-5.0f64, -1.0, 0.0, 0.3, 4.0] {
            assert!((softplus(x) - (1.0 + x.exp()).ln()).abs() < 1e-14);
        }
        assert_eq!(softplus(100.0f64), 100.0);
        assert!(softplus(-100.0f64) > 0.0);
    }

    #[test]
    fn sigmoid_is_symmetric() {
        for &x in &[0.0f32, 0.5, 3.0, 30.0] {
            assert!((sigmoid(x) + sigmoid(-x) - 1.0).abs() < 1e-6);
        }
        assert_eq!(sigmoid(0.0f64), 0.5);
    }
}
