//! Scalar abstraction for the numeric core.
//!
//! Every numeric routine in this crate is generic over [`Scalar`], so the same
//! engine runs in double precision (the default, and what all file formats
//! store) or single precision when configured. Only `f32` and `f64` implement
//! the trait.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

/// Floating-point element type of tensors, volumes and metrics.
pub trait Scalar:
    num_traits::Float
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Lossless (f32) or identity (f64) conversion from an `f64` constant.
    fn of_f64(x: f64) -> Self;
    /// Widening (f32) or identity (f64) conversion to `f64`.
    fn as_f64(self) -> f64;

    /// General strided matrix multiply `c = alpha·a·b + beta·c` with explicit
    /// (row, col) element strides per operand, `a` being m×k, `b` k×n, `c` m×n.
    #[allow(clippy::too_many_arguments)]
    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );

    /// Row-major `c = a·b` convenience wrapper.
    fn gemm(m: usize, k: usize, n: usize, alpha: Self, a: &[Self], b: &[Self], beta: Self, c: &mut [Self]) {
        Self::gemm_strided(
            m,
            k,
            n,
            alpha,
            a,
            (k as isize, 1),
            b,
            (n as isize, 1),
            beta,
            c,
            (n as isize, 1),
        );
    }
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path) => {
        impl Scalar for $t {
            #[inline]
            fn of_f64(x: f64) -> Self {
                x as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            fn gemm_strided(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
                c_strides: (isize, isize),
            ) {
                debug_assert!(span(m, k, a_strides) <= a.len());
                debug_assert!(span(k, n, b_strides) <= b.len());
                debug_assert!(span(m, n, c_strides) <= c.len());
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0,
                        c_strides.1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f64, matrixmultiply::dgemm);
impl_scalar!(f32, matrixmultiply::sgemm);

/// Number of elements a strided (rows×cols) view reaches into its buffer.
fn span(rows: usize, cols: usize, strides: (isize, isize)) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    let last = (rows as isize - 1) * strides.0 + (cols as isize - 1) * strides.1;
    last as usize + 1
}
