use std::fmt::Debug;

use num_traits::{Float, FromPrimitive};

/// Element type of a [`crate::Tensor`].
///
/// Implemented for `f32` (training storage) and `f64` (the shadow precision
/// used by finite-difference gradient checks).
pub trait Scalar: Float + FromPrimitive + Debug + Default + Send + Sync + 'static {
    /// `c = alpha * op(a) * op(b) + beta * c` on row-major storage, where
    /// `op(a)` is `m x k` and `op(b)` is `k x n`. A transposed operand is
    /// stored row-major in its untransposed shape.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_trans: bool,
        b: &[Self],
        b_trans: bool,
        beta: Self,
        c: &mut [Self],
    );

    fn as_f64(self) -> f64;

    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("finite conversion")
    }
}

fn strides(rows: usize, cols: usize, trans: bool) -> (isize, isize) {
    // Strides of op(x), where op(x) has `rows x cols` and x is stored
    // row-major in its untransposed shape.
    if trans {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_scalar {
    ($t:ty, $kernel:path) => {
        impl Scalar for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_trans: bool,
                b: &[Self],
                b_trans: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                let (rsa, csa) = strides(m, k, a_trans);
                let (rsb, csb) = strides(k, n, b_trans);
                // SAFETY: the asserts above bound every index the kernel
                // touches given these strides.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        1.0,
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

            fn as_f64(self) -> f64 {
                self as f64
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);
