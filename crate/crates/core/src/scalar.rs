//! Numeric abstractions shared by the feature, model and metric code.
//!
//! Feature transformers and learners are generic over [`Scalar`] (`f32` or
//! `f64`). Ranking metrics are generic over [`Fraction`], which additionally
//! admits exact rationals so metric oracles can be compared without rounding.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_rational::Ratio;
use num_traits::{Float, FromPrimitive, Num, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point type usable for features and model parameters.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    const NAME: &'static str;

    fn from_count(n: usize) -> Self {
        <Self as FromPrimitive>::from_usize(n).expect("usize representable as float")
    }

    fn lit(x: f64) -> Self {
        <Self as FromPrimitive>::from_f64(x).expect("f64 representable")
    }
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";
}
impl Scalar for f64 {
    const NAME: &'static str = "f64";
}

/// A value that can represent the ratio of two counts.
pub trait Fraction: Clone + PartialOrd + Num + Debug + Send + Sync {
    fn ratio(num: usize, den: usize) -> Self;
    fn to_f64(&self) -> f64;

    /// Arithmetic mean; `None` for no values.
    fn mean(values: &[Self]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let sum = values.iter().cloned().fold(Self::zero(), |a, b| a + b);
        Some(sum / Self::ratio(values.len(), 1))
    }
}

impl Fraction for f64 {
    fn ratio(num: usize, den: usize) -> Self {
        num as f64 / den as f64
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn mean(values: &[Self]) -> Option<Self> {
        (!values.is_empty()).then(|| compensated_sum(values.iter().copied()) / values.len() as f64)
    }
}

impl Fraction for f32 {
    fn ratio(num: usize, den: usize) -> Self {
        num as f32 / den as f32
    }
    fn to_f64(&self) -> f64 {
        f64::from(*self)
    }
    fn mean(values: &[Self]) -> Option<Self> {
        (!values.is_empty()).then(|| compensated_sum(values.iter().copied()) / values.len() as f32)
    }
}

impl Fraction for Ratio<i64> {
    fn ratio(num: usize, den: usize) -> Self {
        Ratio::new(num as i64, den as i64)
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

impl Fraction for Ratio<i128> {
    fn ratio(num: usize, den: usize) -> Self {
        Ratio::new(num as i128, den as i128)
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

/// Neumaier-compensated sum, independent of how the terms were produced.
pub fn compensated_sum<T: Float>(values: impl IntoIterator<Item = T>) -> T {
    let mut sum = T::zero();
    let mut comp = T::zero();
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp = comp + ((sum - t) + v);
        } else {
            comp = comp + ((v - t) + sum);
        }
        sum = t;
    }
    sum + comp
}
