//! Scalar abstraction for the attribution arithmetic.
//!
//! All energy math is written against [`Scalar`] so the same pipeline runs
//! on `f64`/`f32` for production use and on [`num::BigRational`] when exact
//! arithmetic is wanted (conservation checks, equation-level oracles).

use std::fmt::Debug;

use num::BigRational;
use num_traits::{FromPrimitive, Num, Signed, ToPrimitive};

/// Numeric type the attribution model computes in.
///
/// `accumulate` is the reduction used for every energy/work sum; callers
/// pass values in a canonical (sorted) order so results are deterministic
/// regardless of how the inputs were produced.
pub trait Scalar: Num + Signed + PartialOrd + Clone + Debug + 'static {
    fn from_u64(v: u64) -> Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(&self) -> f64;

    /// Sums values in iteration order. Float impls use compensated
    /// (Kahan) summation; exact types use a plain fold.
    fn accumulate<I: IntoIterator<Item = Self>>(values: I) -> Self {
        values
            .into_iter()
            .fold(Self::zero(), |acc, v| acc + v)
    }

    fn max_zero(self) -> Self {
        if self < Self::zero() {
            Self::zero()
        } else {
            self
        }
    }
}

fn kahan<T, I>(values: I) -> T
where
    T: num_traits::Float,
    I: IntoIterator<Item = T>,
{
    // Neumaier's variant: also compensates when the addend dominates the
    // running sum, which plain Kahan loses.
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

impl Scalar for f64 {
    fn from_u64(v: u64) -> Self {
        v as f64
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn accumulate<I: IntoIterator<Item = Self>>(values: I) -> Self {
        kahan(values)
    }
}

impl Scalar for f32 {
    fn from_u64(v: u64) -> Self {
        v as f32
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(&self) -> f64 {
        f64::from(*self)
    }
    fn accumulate<I: IntoIterator<Item = Self>>(values: I) -> Self {
        kahan(values)
    }
}

impl Scalar for BigRational {
    fn from_u64(v: u64) -> Self {
        <BigRational as FromPrimitive>::from_u64(v).expect("u64 is always representable")
    }
    fn from_f64(v: f64) -> Self {
        <BigRational as FromPrimitive>::from_f64(v).expect("finite f64 is always representable")
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kahan_beats_naive_on_skewed_inputs() {
        let values = vec![1e16, 1.0, -1e16, 1.0];
        assert_eq!(f64::accumulate(values), 2.0);
    }

    #[test]
    fn rational_from_f64_is_exact() {
        let r = <BigRational as Scalar>::from_f64(1.15);
        assert_eq!(Scalar::to_f64(&r), 1.15);
    }

    #[test]
    fn max_zero_clamps() {
        assert_eq!((-3.0f64).max_zero(), 0.0);
        assert_eq!(3.0f64.max_zero(), 3.0);
    }
}
