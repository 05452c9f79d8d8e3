//! Safe wrapper over the strided GEMM kernel.
//!
//! Each output element accumulates over `k` in a fixed order that does not
//! depend on how many rows are in the product, so decoding a point alone or
//! inside a large batch gives bitwise-identical results.

use super::Real;

/// Borrowed matrix view with arbitrary (non-negative) strides.
#[derive(Clone, Copy)]
pub struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a, T> MatRef<'a, T> {
    pub fn row_major(data: &'a [T], rows: usize, cols: usize) -> Self {
        MatRef {
            data,
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// The transpose, as a view over the same buffer.
    pub fn t(self) -> Self {
        MatRef {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }

    fn fits(&self) -> bool {
        if self.rows == 0 || self.cols == 0 {
            return true;
        }
        (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride < self.data.len()
    }
}

/// `c <- alpha * a @ b + beta * c`, with `c` row-major `a.rows x b.cols`.
pub fn gemm<T: Real>(alpha: T, a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, c: &mut [T]) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    assert!(a.fits() && b.fits(), "gemm operand out of bounds");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(c.len(), m * n, "gemm output size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v = if beta == T::zero() { T::zero() } else { *v * beta };
        }
        return;
    }
    // SAFETY: bounds verified by `fits` and the output length check; `c` is
    // a unique borrow so it cannot alias the shared inputs.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        c
    }

    #[test]
    fn matches_naive_product_and_transposes() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.91).cos()).collect();
        let mut c = vec![0.0; m * n];
        gemm(1.0, MatRef::row_major(&a, m, k), MatRef::row_major(&b, k, n), 0.0, &mut c);
        for (x, y) in c.iter().zip(naive(&a, &b, m, k, n)) {
            assert!((x - y).abs() < 1e-12);
        }
        // (b^T a^T) == (a b)^T
        let mut ct = vec![0.0; n * m];
        gemm(1.0, MatRef::row_major(&b, k, n).t(), MatRef::row_major(&a, m, k).t(), 0.0, &mut ct);
        for i in 0..m {
            for j in 0..n {
                assert!((ct[j * m + i] - c[i * n + j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rows_are_independent_of_batch_size() {
        let (k, n) = (300, 37);
        let b: Vec<f32> = (0..k * n).map(|i| ((i * 7919) % 1000) as f32 / 1000.0 - 0.5).collect();
        let a: Vec<f32> = (0..41 * k).map(|i| ((i * 104729) % 997) as f32 / 997.0 - 0.5).collect();
        let mut full = vec![0.0f32; 41 * n];
        gemm(1.0, MatRef::row_major(&a, 41, k), MatRef::row_major(&b, k, n), 0.0, &mut full);
        for r in [0usize, 13, 40] {
            let mut one = vec![0.0f32; n];
            gemm(1.0, MatRef::row_major(&a[r * k..(r + 1) * k], 1, k), MatRef::row_major(&b, k, n), 0.0, &mut one);
            assert_eq!(one.as_slice(), &full[r * n..(r + 1) * n]);
        }
    }
}
