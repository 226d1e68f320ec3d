//! Floating-point abstraction shared by every numeric module.
//!
//! All math in the crate is written against [`Scalar`], which is implemented
//! for `f32` and `f64`. The experiment harness and CLI use `f64` throughout;
//! `f32` is available for callers that accept the extra rounding error.

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;

pub trait Scalar:
    'static
    + Send
    + Sync
    + Float
    + FloatConst
    + NumAssign
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + LowerExp
{
    /// Converts an `f64` literal, rounding to the nearest representable value.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }

    /// Elementwise `(sin, cos)` of `x` into `sin` and `cos`, which must have the same length.
    ///
    /// Each output depends only on the matching input, not on its position in the slice.
    fn sin_cos_slice(x: &[Self], sin: &mut [Self], cos: &mut [Self]);
}

macro_rules! simd_sin_cos {
    ($t:ty, $v:ty, $lanes:expr) => {
        fn sin_cos_slice(x: &[$t], sin: &mut [$t], cos: &mut [$t]) {
            assert!(x.len() == sin.len() && x.len() == cos.len(), "sin_cos_slice: length mismatch");
            let head = x.len() - x.len() % $lanes;
            for ((xc, sc), cc) in x[..head]
                .chunks_exact($lanes)
                .zip(sin[..head].chunks_exact_mut($lanes))
                .zip(cos[..head].chunks_exact_mut($lanes))
            {
                let v = <$v>::from(<[$t; $lanes]>::try_from(xc).expect("lane chunk"));
                let (s, c) = v.sin_cos();
                sc.copy_from_slice(&s.to_array());
                cc.copy_from_slice(&c.to_array());
                // The vector kernel only reduces moderate arguments accurately.
                for i in 0..$lanes {
                    if !(xc[i].abs() <= 1e3) {
                        (sc[i], cc[i]) = xc[i].sin_cos();
                    }
                }
            }
            if head < x.len() {
                let k = x.len() - head;
                let mut buf = [<$t>::default(); $lanes];
                buf[..k].copy_from_slice(&x[head..]);
                let (mut sb, mut cb) = ([<$t>::default(); $lanes], [<$t>::default(); $lanes]);
                <$t>::sin_cos_slice(&buf, &mut sb, &mut cb);
                sin[head..].copy_from_slice(&sb[..k]);
                cos[head..].copy_from_slice(&cb[..k]);
            }
        }
    };
}

impl Scalar for f32 {
    simd_sin_cos!(f32, wide::f32x8, 8);
}

impl Scalar for f64 {
    simd_sin_cos!(f64, wide::f64x4, 4);
}

/// Neumaier-compensated accumulator.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum<T> {
    sum: T,
    comp: T,
}

impl<T: Scalar> CompensatedSum<T> {
    pub fn new() -> Self {
        Self {
            sum: T::zero(),
            comp: T::zero(),
        }
    }

    #[inline]
    pub fn add(&mut self, v: T) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> T {
        self.sum + self.comp
    }
}

/// Compensated sum of a slice.
pub fn csum<T: Scalar>(values: &[T]) -> T {
    let mut acc = CompensatedSum::new();
    for &v in values {
        acc.add(v);
    }
    acc.value()
}

/// Compensated sum of an iterator.
pub fn csum_iter<T: Scalar>(values: impl IntoIterator<Item = T>) -> T {
    let mut acc = CompensatedSum::new();
    for v in values {
        acc.add(v);
    }
    acc.value()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let mut v = vec![1.0e16_f64];
        v.extend(std::iter::repeat(1.0).take(1000));
        v.push(-1.0e16);
        assert_eq!(csum(&v), 1000.0);
        let naive: f64 = v.iter().sum();
        assert_ne!(naive, 1000.0);
    }

    #[test]
    fn slice_sin_cos_matches_std() {
        let mut x: Vec<f64> = (0..4001).map(|i| (i as f64 - 2000.0) * 0.37).collect();
        x.extend([1e3, -1e3 - 0.5, 2.5e5, 1e12, f64::NAN, 0.0, -0.0, 1e-300]);
        let (mut s, mut c) = (vec![0.0; x.len()], vec![0.0; x.len()]);
        f64::sin_cos_slice(&x, &mut s, &mut c);
        for i in 0..x.len() {
            let (ws, wc) = x[i].sin_cos();
            if x[i].is_nan() {
                assert!(s[i].is_nan() && c[i].is_nan());
                continue;
            }
            assert!((s[i] - ws).abs() <= 4e-16 && (c[i] - wc).abs() <= 4e-16, "x = {}", x[i]);
        }
        let xf: Vec<f32> = x.iter().map(|&v| v as f32).collect();
        let (mut s, mut c) = (vec![0.0f32; xf.len()], vec![0.0f32; xf.len()]);
        f32::sin_cos_slice(&xf, &mut s, &mut c);
        for i in 0..xf.len() {
            if xf[i].is_nan() {
                continue;
            }
            let (ws, wc) = xf[i].sin_cos();
            assert!((s[i] - ws).abs() <= 4e-7 && (c[i] - wc).abs() <= 4e-7, "x = {}", xf[i]);
        }
    }

    #[test]
    fn lit_round_trips_for_f32() {
        assert_eq!(f32::lit(0.5), 0.5f32);
        assert_eq!(f64::from_count(7), 7.0);
    }
}
