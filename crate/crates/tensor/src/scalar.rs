use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Strided read-only matrix view used by [`Scalar::gemm`].
#[derive(Clone, Copy, Debug)]
pub struct MatRef<'a, F> {
    pub data: &'a [F],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

/// Strided mutable matrix view used as the gemm destination.
#[derive(Debug)]
pub struct MatMut<'a, F> {
    pub data: &'a mut [F],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

fn max_index(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs
    }
}

impl<'a, F> MatRef<'a, F> {
    /// Dense row-major view.
    pub fn row_major(data: &'a [F], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, row_stride: cols, col_stride: 1 }
    }

    /// Transposed view of a dense row-major `rows x cols` buffer.
    pub fn row_major_t(data: &'a [F], rows: usize, cols: usize) -> Self {
        Self { data, rows: cols, cols: rows, row_stride: 1, col_stride: cols }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            assert!(
                max_index(self.rows, self.cols, self.row_stride, self.col_stride) < self.data.len(),
                "matrix view out of bounds"
            );
        }
    }
}

impl<'a, F> MatMut<'a, F> {
    pub fn row_major(data: &'a mut [F], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, row_stride: cols, col_stride: 1 }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            assert!(
                max_index(self.rows, self.cols, self.row_stride, self.col_stride) < self.data.len(),
                "matrix view out of bounds"
            );
        }
    }
}

/// Floating point element type of the engine (`f32` for training, `f64` for
/// verification runs).
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum<Self>
{
    const NAME: &'static str;

    /// `c <- alpha * a * b + beta * c`.
    fn gemm(alpha: Self, a: MatRef<'_, Self>, b: MatRef<'_, Self>, beta: Self, c: MatMut<'_, Self>);

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

macro_rules! impl_scalar {
    ($t:ty, $name:literal, $kernel:path) => {
        impl Scalar for $t {
            const NAME: &'static str = $name;

            fn gemm(alpha: Self, a: MatRef<'_, Self>, b: MatRef<'_, Self>, beta: Self, c: MatMut<'_, Self>) {
                assert_eq!(a.cols, b.rows, "gemm inner dimension");
                assert_eq!(a.rows, c.rows, "gemm row dimension");
                assert_eq!(b.cols, c.cols, "gemm column dimension");
                a.check();
                b.check();
                c.check();
                if c.rows == 0 || c.cols == 0 {
                    return;
                }
                // SAFETY: every view was bounds-checked against its backing slice above,
                // and `c` is uniquely borrowed.
                unsafe {
                    $kernel(
                        a.rows,
                        a.cols,
                        b.cols,
                        alpha,
                        a.data.as_ptr(),
                        a.row_stride as isize,
                        a.col_stride as isize,
                        b.data.as_ptr(),
                        b.row_stride as isize,
                        b.col_stride as isize,
                        beta,
                        c.data.as_mut_ptr(),
                        c.row_stride as isize,
                        c.col_stride as isize,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, "f32", matrixmultiply::sgemm);
impl_scalar!(f64, "f64", matrixmultiply::dgemm);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_with_transposes() {
        let a: Vec<f64> = (0..6).map(|v| v as f64).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64) * 0.5).collect(); // 3x4
        let mut c = vec![1.0f64; 8];
        f64::gemm(1.0, MatRef::row_major(&a, 2, 3), MatRef::row_major(&b, 3, 4), 2.0, MatMut::row_major(&mut c, 2, 4));
        for i in 0..2 {
            for j in 0..4 {
                let mut s = 2.0;
                for k in 0..3 {
                    s += a[i * 3 + k] * b[k * 4 + j];
                }
                assert_eq!(c[i * 4 + j], s);
            }
        }
        // a^T (3x2) times a (2x3)
        let mut d = vec![0.0f64; 9];
        f64::gemm(1.0, MatRef::row_major_t(&a, 2, 3), MatRef::row_major(&a, 2, 3), 0.0, MatMut::row_major(&mut d, 3, 3));
        assert_eq!(d[0], 9.0); // 0*0 + 3*3
        assert_eq!(d[5], 1.0 * 2.0 + 4.0 * 5.0);
    }
}
