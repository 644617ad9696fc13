//! Floating point abstraction shared by the trainers, retrieval and metrics.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Scalar type of embedding entries.
///
/// Implemented for `f32` (the production storage type) and `f64` (used by
/// the numerical checks, where finite differences need the extra precision).
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + FromStr + Send + Sync + 'static
{
    fn from_f64_lossy(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("finite conversion")
    }

    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).expect("float to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Logistic function.
#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// `ln σ(x)` without overflow for large `|x|`.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Dot product accumulated left to right in `T`.
///
/// Summation order is part of the trainer contract: the reference trainer
/// and a single parameter-server shard must produce identical bits.
#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc = acc + x * y;
    }
    acc
}

/// Dot product with 64-bit accumulation, used for scoring.
#[inline]
pub fn dot_f64<T: Real>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| x.as_f64() * y.as_f64())
        .sum()
}

#[inline]
pub fn norm_f64<T: Real>(a: &[T]) -> f64 {
    dot_f64(a, a).sqrt()
}
