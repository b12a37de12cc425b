//! Scalar abstraction shared by every numeric module.
//!
//! All of the channel, estimation, equalizer and security math is written
//! against [`Real`], so the same code runs in `f32` (cheap Monte Carlo) and
//! `f64` (the default for experiments and acceptance checks).

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::str::FromStr;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

/// Floating-point scalar: `f32` or `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + FromStr
    + serde::Serialize
    + serde::de::DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal; every literal used in this crate is representable.
    fn lit(x: f64) -> Self;

    fn to_f64_lossy(self) -> f64;

    fn of_usize(n: usize) -> Self {
        Self::lit(n as f64)
    }

    /// One draw from N(0, 1).
    fn sample_std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// One draw from Gamma(shape, scale). Both arguments must be positive.
    fn sample_gamma<R: Rng + ?Sized>(shape: Self, scale: Self, rng: &mut R) -> Self;

    /// Uniform draw in [0, 1).
    fn sample_unit<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            #[inline]
            fn lit(x: f64) -> Self {
                x as $t
            }

            #[inline]
            fn to_f64_lossy(self) -> f64 {
                self as f64
            }

            #[inline]
            fn sample_std_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                StandardNormal.sample(rng)
            }

            fn sample_gamma<R: Rng + ?Sized>(shape: Self, scale: Self, rng: &mut R) -> Self {
                Gamma::new(shape, scale)
                    .expect("gamma parameters validated by caller")
                    .sample(rng)
            }

            #[inline]
            fn sample_unit<R: Rng + ?Sized>(rng: &mut R) -> Self {
                rng.random::<$t>()
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);

/// Sum with a fixed left-to-right reduction order.
pub(crate) fn ordered_sum<T: Real>(values: impl IntoIterator<Item = T>) -> T {
    values.into_iter().fold(T::zero(), |acc, v| acc + v)
}

pub(crate) fn mean<T: Real>(values: &[T]) -> T {
    ordered_sum(values.iter().copied()) / T::of_usize(values.len())
}
