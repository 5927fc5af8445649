//! Square-frame 2-D FFT on row-major buffers, plus centering shifts.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Plans for an `rows × cols` transform, reused across frames.
pub struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    column: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl Fft2 {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        let row_fwd = planner.plan_fft_forward(cols);
        let row_inv = planner.plan_fft_inverse(cols);
        let col_fwd = planner.plan_fft_forward(rows);
        let col_inv = planner.plan_fft_inverse(rows);
        let scratch_len = [&row_fwd, &row_inv, &col_fwd, &col_inv]
            .iter()
            .map(|f| f.get_inplace_scratch_len())
            .max()
            .unwrap_or(0);
        Self {
            rows,
            cols,
            row_fwd,
            row_inv,
            col_fwd,
            col_inv,
            column: vec![Complex64::default(); rows],
            scratch: vec![Complex64::default(); scratch_len],
        }
    }

    /// Unnormalized forward transform, in place.
    pub fn forward(&mut self, buf: &mut [Complex64]) {
        let (r, c) = (Arc::clone(&self.row_fwd), Arc::clone(&self.col_fwd));
        self.apply(buf, &*r, &*c);
    }

    /// Unnormalized inverse transform, in place. Divide by `rows·cols` to
    /// undo `forward`.
    pub fn inverse(&mut self, buf: &mut [Complex64]) {
        let (r, c) = (Arc::clone(&self.row_inv), Arc::clone(&self.col_inv));
        self.apply(buf, &*r, &*c);
    }

    fn apply(&mut self, buf: &mut [Complex64], row_fft: &dyn Fft<f64>, col_fft: &dyn Fft<f64>) {
        assert_eq!(
            buf.len(),
            self.rows * self.cols,
            "buffer does not match plan"
        );
        for row in buf.chunks_exact_mut(self.cols) {
            row_fft.process_with_scratch(row, &mut self.scratch);
        }
        for c in 0..self.cols {
            for r in 0..self.rows {
                self.column[r] = buf[r * self.cols + c];
            }
            col_fft.process_with_scratch(&mut self.column, &mut self.scratch);
            for r in 0..self.rows {
                buf[r * self.cols + c] = self.column[r];
            }
        }
    }
}

/// Move the zero frequency from index 0 to index `len / 2` along both axes.
pub fn fftshift<T: Copy>(src: &[T], rows: usize, cols: usize, dst: &mut [T]) {
    for r in 0..rows {
        let rr = (r + rows / 2) % rows;
        for c in 0..cols {
            let cc = (c + cols / 2) % cols;
            dst[rr * cols + cc] = src[r * cols + c];
        }
    }
}

/// Inverse of [`fftshift`], also for odd sizes.
pub fn ifftshift<T: Copy>(src: &[T], rows: usize, cols: usize, dst: &mut [T]) {
    for r in 0..rows {
        let rr = (r + rows / 2) % rows;
        for c in 0..cols {
            let cc = (c + cols / 2) % cols;
            dst[r * cols + c] = src[rr * cols + cc];
        }
    }
}
