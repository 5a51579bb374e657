use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Real scalar used throughout the engine.
///
/// Tolerances in this crate are written for 64-bit arithmetic. [`Scalar::tol`]
/// rescales them for narrower types so the same checks stay meaningful for
/// `f32`.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64`.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    /// Scale an `f64` tolerance to this type's precision.
    ///
    /// Identity for `f64`; for wider-epsilon types the tolerance grows with
    /// the square root of the epsilon ratio.
    #[inline]
    fn tol(tol64: f64) -> Self {
        let ratio = (Self::epsilon().as_f64() / f64::EPSILON).max(1.0);
        Self::of(tol64 * ratio.sqrt())
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Max absolute entry of `a - b`.
pub fn max_abs_diff<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs()))
}

pub fn max_abs<T: Scalar>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |m, &x| m.max(x.abs()))
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn to_f64_vec<T: Scalar>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.as_f64()).collect()
}
