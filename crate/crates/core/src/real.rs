//! Scalar abstraction over `f32`/`f64`.
//!
//! Training runs in `f32` for speed; gradient verification instantiates the
//! same code at `f64` so central differences are not drowned by rounding.

use core::fmt::Debug;
use core::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

pub trait Real:
    Copy
    + PartialOrd
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn abs(self) -> Self;
    fn maximum(self, other: Self) -> Self;
    fn is_finite(self) -> bool;
    /// `self * b + c`, fused when the build target has hardware FMA (plain
    /// multiply-add otherwise; never a libcall).
    fn mul_add_fast(self, b: Self, c: Self) -> Self;
}

macro_rules! impl_real {
    ($t:ty, $exp:path, $ln:path, $sqrt:path, $fma:path) => {
        impl Real for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;

            #[inline(always)]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline(always)]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline(always)]
            fn exp(self) -> Self {
                #[cfg(feature = "std")]
                {
                    <$t>::exp(self)
                }
                #[cfg(not(feature = "std"))]
                {
                    $exp(self)
                }
            }
            #[inline(always)]
            fn ln(self) -> Self {
                #[cfg(feature = "std")]
                {
                    <$t>::ln(self)
                }
                #[cfg(not(feature = "std"))]
                {
                    $ln(self)
                }
            }
            #[inline(always)]
            fn sqrt(self) -> Self {
                #[cfg(feature = "std")]
                {
                    <$t>::sqrt(self)
                }
                #[cfg(not(feature = "std"))]
                {
                    $sqrt(self)
                }
            }
            #[inline(always)]
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            #[inline(always)]
            fn maximum(self, other: Self) -> Self {
                if self > other {
                    self
                } else {
                    other
                }
            }
            #[inline(always)]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
            #[inline(always)]
            fn mul_add_fast(self, b: Self, c: Self) -> Self {
                if cfg!(target_feature = "fma") {
                    #[cfg(feature = "std")]
                    {
                        <$t>::mul_add(self, b, c)
                    }
                    #[cfg(not(feature = "std"))]
                    {
                        $fma(self, b, c)
                    }
                } else {
                    self * b + c
                }
            }
        }
    };
}

impl_real!(f32, libm::expf, libm::logf, libm::sqrtf, libm::fmaf);
impl_real!(f64, libm::exp, libm::log, libm::sqrt, libm::fma);

/// `exp` for plain `f64` call sites that must also build without std.
#[inline(always)]
pub fn exp64(x: f64) -> f64 {
    Real::exp(x)
}

/// `ln` for plain `f64` call sites that must also build without std.
#[inline(always)]
pub fn ln64(x: f64) -> f64 {
    Real::ln(x)
}

/// `sqrt` for plain `f64` call sites that must also build without std.
#[inline(always)]
pub fn sqrt64(x: f64) -> f64 {
    Real::sqrt(x)
}

/// `x^y` for plain `f64` call sites that must also build without std.
#[inline(always)]
pub fn powf64(x: f64, y: f64) -> f64 {
    #[cfg(feature = "std")]
    {
        x.powf(y)
    }
    #[cfg(not(feature = "std"))]
    {
        libm::pow(x, y)
    }
}

/// Round-half-away-from-zero, matching `f64::round`.
#[inline(always)]
pub fn round64(x: f64) -> f64 {
    #[cfg(feature = "std")]
    {
        x.round()
    }
    #[cfg(not(feature = "std"))]
    {
        libm::round(x)
    }
}
