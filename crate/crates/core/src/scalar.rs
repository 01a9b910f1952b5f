//! Floating point scalar abstraction shared by every numeric routine.
//!
//! Training runs in `f32`; gradient checking runs the identical graph in
//! `f64`. Everything numeric is written once against [`Scalar`].

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Matrix operand layout for [`Scalar::gemm`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// Row-major, as stored.
    Normal,
    /// Row-major storage read as its transpose.
    Transposed,
}

/// Real scalar usable as tensor element: `f32` or `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + 'static
{
    /// `c = alpha * op(a) * op(b) + beta * c` with `op(a)` of shape `m x k`
    /// and `op(b)` of shape `k x n`; `c` is row-major `m x n`.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_layout: Layout,
        b: &[Self],
        b_layout: Layout,
        beta: Self,
        c: &mut [Self],
    );

    fn erf(self) -> Self;

    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("scalar conversion")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar conversion")
    }
}

fn strides(rows: usize, cols: usize, layout: Layout) -> (isize, isize) {
    // (row stride, col stride) of op(x) where op(x) is rows x cols.
    match layout {
        Layout::Normal => (cols as isize, 1),
        Layout::Transposed => (1, rows as isize),
    }
}

fn check_gemm_lengths(m: usize, k: usize, n: usize, a: usize, b: usize, c: usize) {
    assert!(a >= m * k, "gemm: lhs too short");
    assert!(b >= k * n, "gemm: rhs too short");
    assert!(c >= m * n, "gemm: output too short");
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path, $erf:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_layout: Layout,
                b: &[Self],
                b_layout: Layout,
                beta: Self,
                c: &mut [Self],
            ) {
                if m == 0 || n == 0 {
                    return;
                }
                check_gemm_lengths(m, k, n, a.len(), b.len(), c.len());
                let (rsa, csa) = strides(m, k, a_layout);
                let (rsb, csb) = strides(k, n, b_layout);
                // SAFETY: lengths were checked above against the extents and
                // strides describe in-bounds row-major (or transposed) views.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }

            #[inline]
            fn erf(self) -> Self {
                $erf(self)
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm, libm::erff);
impl_scalar!(f64, matrixmultiply::dgemm, libm::erf);
