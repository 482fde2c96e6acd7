//! Floating-point abstraction: everything numeric in this crate is generic
//! over [`Real`], implemented for `f32` and `f64`.

use ndarray::LinalgScalar;
use num_traits::{Float, FromPrimitive, NumAssign};

/// Scalar trait for the kinetic solver.
///
/// `erf` is required by the closed-form hard-sphere collision frequency.
pub trait Real:
    Float + FromPrimitive + NumAssign + LinalgScalar + Send + Sync + std::fmt::Debug + std::fmt::Display + 'static
{
    fn erf(self) -> Self;

    /// Lossy conversion from `f64` (exact for `f64` itself).
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 conversion")
    }

    /// Conversion to `f64` for reporting.
    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("f64 conversion")
    }

    #[inline]
    fn pi() -> Self {
        Self::of(std::f64::consts::PI)
    }
}

impl Real for f64 {
    #[inline]
    fn erf(self) -> f64 {
        libm::erf(self)
    }
}

impl Real for f32 {
    #[inline]
    fn erf(self) -> f32 {
        libm::erff(self)
    }
}

/// Pairwise (cascade) summation in a fixed order.
///
/// Used for every quadrature reduction so results are reproducible between
/// runs and independent of thread count.
pub fn pairwise_sum<T: Real>(xs: &[T]) -> T {
    match xs.len() {
        0 => T::zero(),
        1..=16 => {
            let mut acc = T::zero();
            for &x in xs {
                acc += x;
            }
            acc
        }
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

/// Dot product with eight interleaved accumulators combined in a fixed
/// order: deterministic like the pairwise scheme but vectorizable. Used in
/// iterative-solver inner products.
pub fn fast_dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [T::zero(); 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (xa, xb) in (&mut ca).zip(&mut cb) {
        let xa: &[T; 8] = xa.try_into().unwrap();
        let xb: &[T; 8] = xb.try_into().unwrap();
        for j in 0..8 {
            lanes[j] += xa[j] * xb[j];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += *x * *y;
    }
    ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3]))
        + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7]))
        + tail
}

/// Pairwise-summed dot product of equal-length slices.
pub fn pairwise_dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    match a.len() {
        0 => T::zero(),
        1..=16 => {
            let mut acc = T::zero();
            for (&x, &y) in a.iter().zip(b) {
                acc += x * y;
            }
            acc
        }
        n => {
            let mid = n / 2;
            pairwise_dot(&a[..mid], &b[..mid]) + pairwise_dot(&a[mid..], &b[mid..])
        }
    }
}
