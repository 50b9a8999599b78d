//! Strided matrix products on top of `matrixmultiply`.

/// Row-major view: `(rows, cols, row_stride, col_stride)` into a slice.
#[derive(Clone, Copy)]
pub(crate) struct View {
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl View {
    pub fn row_major(rows: usize, cols: usize) -> Self {
        Self { rows, cols, rs: cols, cs: 1 }
    }

    /// The transpose of a row-major `rows x cols` matrix.
    pub fn transposed(rows: usize, cols: usize) -> Self {
        Self { rows: cols, cols: rows, rs: 1, cs: cols }
    }

    fn max_index(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            0
        } else {
            (self.rows - 1) * self.rs + (self.cols - 1) * self.cs
        }
    }
}

/// `c = a * b + beta * c`.
pub(crate) fn gemm(a: &[f64], av: View, b: &[f64], bv: View, beta: f64, c: &mut [f64], cv: View) {
    assert_eq!(av.cols, bv.rows, "inner dimensions");
    assert_eq!(av.rows, cv.rows, "output rows");
    assert_eq!(bv.cols, cv.cols, "output cols");
    if cv.rows == 0 || cv.cols == 0 {
        return;
    }
    if av.cols == 0 {
        for i in 0..cv.rows {
            for j in 0..cv.cols {
                c[i * cv.rs + j * cv.cs] *= beta;
            }
        }
        return;
    }
    assert!(av.max_index() < a.len() && bv.max_index() < b.len() && cv.max_index() < c.len());
    // SAFETY: every index reachable through the three views was bounds-checked above.
    unsafe {
        matrixmultiply::dgemm(
            av.rows,
            av.cols,
            bv.cols,
            1.0,
            a.as_ptr(),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr(),
            bv.rs as isize,
            bv.cs as isize,
            beta,
            c.as_mut_ptr(),
            cv.rs as isize,
            cv.cs as isize,
        );
    }
}
