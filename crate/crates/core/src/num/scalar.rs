//! Scalar abstraction over the two working precisions.
//!
//! Training runs in f32 for speed; oracle and gradient-check tests run in
//! f64. Everything in the numeric stack is generic over [`Scalar`].

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use serde::Serialize;

/// Floating-point scalar used by tensors, the tape, and the model.
pub trait Scalar:
    Copy
    + Clone
    + Debug
    + Display
    + Default
    + PartialOrd
    + PartialEq
    + Send
    + Sync
    + Serialize
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + 'static
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn from_usize(n: usize) -> Self {
        Self::from_f64(n as f64)
    }

    fn abs(self) -> Self;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn cos(self) -> Self;
    fn sin(self) -> Self;
    fn powi(self, n: i32) -> Self;
    fn is_finite(self) -> bool;
    fn max_s(self, other: Self) -> Self;
    fn min_s(self, other: Self) -> Self;

    /// GELU in the exact Gaussian-CDF form together with its derivative:
    /// `gelu(x) = x * Phi(x)`, `gelu'(x) = Phi(x) + x * phi(x)`.
    fn gelu_with_grad(self) -> (Self, Self);

    /// GEMM on row-major buffers: `c = alpha * a @ b + beta * c`,
    /// with `a: [m,k]`, `b: [k,n]`, `c: [m,n]`.
    fn gemm(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]);
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl Scalar for f64 {
    const ZERO: f64 = 0.0;
    const ONE: f64 = 1.0;

    #[inline]
    fn from_f64(x: f64) -> f64 {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn abs(self) -> f64 {
        f64::abs(self)
    }
    #[inline]
    fn sqrt(self) -> f64 {
        f64::sqrt(self)
    }
    #[inline]
    fn exp(self) -> f64 {
        f64::exp(self)
    }
    #[inline]
    fn cos(self) -> f64 {
        f64::cos(self)
    }
    #[inline]
    fn sin(self) -> f64 {
        f64::sin(self)
    }
    #[inline]
    fn powi(self, n: i32) -> f64 {
        f64::powi(self, n)
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    #[inline]
    fn max_s(self, other: f64) -> f64 {
        f64::max(self, other)
    }
    #[inline]
    fn min_s(self, other: f64) -> f64 {
        f64::min(self, other)
    }

    #[inline]
    fn gelu_with_grad(self) -> (f64, f64) {
        let cdf = 0.5 * (1.0 + libm::erf(self * INV_SQRT_2));
        let pdf = INV_SQRT_2PI * (-0.5 * self * self).exp();
        (self * cdf, cdf + self * pdf)
    }

    fn gemm(m: usize, k: usize, n: usize, alpha: f64, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
        debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
        unsafe {
            matrixmultiply::dgemm(
                m, k, n, alpha,
                a.as_ptr(), k as isize, 1,
                b.as_ptr(), n as isize, 1,
                beta,
                c.as_mut_ptr(), n as isize, 1,
            );
        }
    }
}

impl Scalar for f32 {
    const ZERO: f32 = 0.0;
    const ONE: f32 = 1.0;

    #[inline]
    fn from_f64(x: f64) -> f32 {
        x as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn abs(self) -> f32 {
        f32::abs(self)
    }
    #[inline]
    fn sqrt(self) -> f32 {
        f32::sqrt(self)
    }
    #[inline]
    fn exp(self) -> f32 {
        f32::exp(self)
    }
    #[inline]
    fn cos(self) -> f32 {
        f32::cos(self)
    }
    #[inline]
    fn sin(self) -> f32 {
        f32::sin(self)
    }
    #[inline]
    fn powi(self, n: i32) -> f32 {
        f32::powi(self, n)
    }
    #[inline]
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
    #[inline]
    fn max_s(self, other: f32) -> f32 {
        f32::max(self, other)
    }
    #[inline]
    fn min_s(self, other: f32) -> f32 {
        f32::min(self, other)
    }

    #[inline(always)]
    fn gelu_with_grad(self) -> (f32, f32) {
        // erf(x/sqrt(2)) via the Abramowitz-Stegun 7.1.26 rational fit; the
        // exp(-x^2/2) factor it needs is exactly the Gaussian pdf used in
        // the derivative, so value and gradient share one exp. Written
        // branch-free so the elementwise loops auto-vectorize.
        let x = self;
        let t = x * std::f32::consts::FRAC_1_SQRT_2;
        let ta = t.abs();
        let d = fast_exp_f32(-t * t);
        let u = 1.0 / (1.0 + 0.327_591_1 * ta);
        let poly = u
            * (0.254_829_592
                + u * (-0.284_496_736 + u * (1.421_413_741 + u * (-1.453_152_027 + u * 1.061_405_429))));
        let erf = (1.0 - poly * d).copysign(t);
        let cdf = 0.5 * (1.0 + erf);
        let pdf = 0.398_942_28_f32 * d;
        (x * cdf, cdf + x * pdf)
    }

    fn gemm(m: usize, k: usize, n: usize, alpha: f32, a: &[f32], b: &[f32], beta: f32, c: &mut [f32]) {
        debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
        unsafe {
            matrixmultiply::sgemm(
                m, k, n, alpha,
                a.as_ptr(), k as isize, 1,
                b.as_ptr(), n as isize, 1,
                beta,
                c.as_mut_ptr(), n as isize, 1,
            );
        }
    }
}

/// Cephes-style expf: accurate to a couple of ulp, no libcall. Inputs are
/// clamped to the finite range so the body stays branch-free.
#[inline(always)]
fn fast_exp_f32(x: f32) -> f32 {
    const LOG2E: f32 = std::f32::consts::LOG2_E;
    const C1: f32 = 0.693_359_375;
    const C2: f32 = -2.121_944_4e-4;
    let x = x.clamp(-87.0, 88.0);
    let z = (x * LOG2E).round_ties_even();
    let r = x - z * C1 - z * C2;
    let r2 = r * r;
    let p = 1.0
        + r
        + r2 * (0.5 + r * (0.166_665_46 + r * (0.041_665_795 + r * (0.008_333_452 + r * 0.001_398_199_9))));
    let n = z as i32;
    // scale by 2^n through the exponent bits
    let bits = ((n + 127) as u32) << 23;
    p * f32::from_bits(bits)
}

/// Precision tag recorded in run snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Default for Precision {
    fn default() -> Self {
        Precision::F32
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_reference_values() {
        let (y0, _) = 0.0f64.gelu_with_grad();
        assert_eq!(y0, 0.0);
        let (y1, _) = 1.0f64.gelu_with_grad();
        assert!((y1 - 0.8413447460685429).abs() < 1e-12, "gelu(1) = {y1}");
    }

    #[test]
    fn f32_gelu_tracks_f64() {
        for i in -80..=80 {
            let x = i as f64 * 0.1;
            let (y64, g64) = x.gelu_with_grad();
            let (y32, g32) = (x as f32).gelu_with_grad();
            assert!((y32 as f64 - y64).abs() < 3e-6, "gelu({x}): {y32} vs {y64}");
            assert!((g32 as f64 - g64).abs() < 3e-6, "gelu'({x}): {g32} vs {g64}");
        }
    }

    #[test]
    fn fast_exp_matches_std() {
        for i in -800..=800 {
            let x = i as f32 * 0.1;
            let got = fast_exp_f32(x);
            let want = x.exp();
            let rel = if want > 0.0 { ((got - want) / want).abs() } else { got.abs() };
            assert!(rel < 1e-5, "exp({x}): {got} vs {want}");
        }
    }

    #[test]
    fn gemm_small() {
        // [2,2] @ [2,2]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        let mut c = [0.0f64; 4];
        f64::gemm(2, 2, 2, 1.0, &a, &b, 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
    }
}
