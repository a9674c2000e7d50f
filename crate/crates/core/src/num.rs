//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
///
/// Training and gradient checks run at `f64`; checkpoints are stored as `f32`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Never fails for the two implementors.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Numerically stable `log(sum(exp(x)))`. Returns `-inf` for an empty slice.
pub fn log_sum_exp<T: Scalar, I>(values: I) -> T
where
    I: IntoIterator<Item = T> + Clone,
{
    let max = values
        .clone()
        .into_iter()
        .fold(T::neg_infinity(), |a, b| a.max(b));
    if max == T::neg_infinity() {
        return max;
    }
    let sum: T = values.into_iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Softmax in place with max subtraction.
pub fn softmax_in_place<T: Scalar>(values: &mut [T]) {
    if values.is_empty() {
        return;
    }
    let max = values.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let mut sum = T::zero();
    for v in values.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in values.iter_mut() {
        *v /= sum;
    }
}

pub fn logistic<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
