//! Two-dimensional DFT helpers.
//!
//! Convention used throughout the crate: the forward transform is the plain
//! unnormalized DFT `F`, the inverse carries the `1/(HW)` factor. The adjoint
//! `F^H` therefore equals the unnormalized inverse transform.

use std::cell::RefCell;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, direction: FftDirection) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft(len, direction))
}

/// A cached 1-D forward FFT plan of the given length.
pub(crate) fn plan_forward(len: usize) -> Arc<dyn Fft<f64>> {
    plan(len, FftDirection::Forward)
}

fn transform_2d(a: &mut Array2<Complex64>, direction: FftDirection) {
    let (h, w) = a.dim();
    let row_fft = plan(w, direction);
    let mut scratch = vec![Complex64::default(); row_fft.get_inplace_scratch_len()];
    for mut row in a.rows_mut() {
        let slice = row.as_slice_mut().expect("rows of a standard-layout array");
        row_fft.process_with_scratch(slice, &mut scratch);
    }
    let col_fft = plan(h, direction);
    scratch.resize(col_fft.get_inplace_scratch_len(), Complex64::default());
    let mut column = vec![Complex64::default(); h];
    for j in 0..w {
        for i in 0..h {
            column[i] = a[[i, j]];
        }
        col_fft.process_with_scratch(&mut column, &mut scratch);
        for i in 0..h {
            a[[i, j]] = column[i];
        }
    }
}

/// Unnormalized forward DFT `F x`.
pub fn fft2(a: &Array2<Complex64>) -> Array2<Complex64> {
    let mut out = a.clone();
    fft2_inplace(&mut out);
    out
}

pub fn fft2_inplace(a: &mut Array2<Complex64>) {
    transform_2d(a, FftDirection::Forward);
}

/// Adjoint transform `F^H x` (unnormalized inverse).
pub fn fft2_adjoint(a: &Array2<Complex64>) -> Array2<Complex64> {
    let mut out = a.clone();
    fft2_adjoint_inplace(&mut out);
    out
}

pub fn fft2_adjoint_inplace(a: &mut Array2<Complex64>) {
    transform_2d(a, FftDirection::Inverse);
}

/// Normalized inverse `F^{-1} x = F^H x / (HW)`.
pub fn ifft2(a: &Array2<Complex64>) -> Array2<Complex64> {
    let mut out = a.clone();
    ifft2_inplace(&mut out);
    out
}

pub fn ifft2_inplace(a: &mut Array2<Complex64>) {
    let n = (a.nrows() * a.ncols()) as f64;
    transform_2d(a, FftDirection::Inverse);
    a.mapv_inplace(|z| z / n);
}

/// Forward DFT of a real image.
pub fn fft2_real(a: &Array2<f64>) -> Array2<Complex64> {
    let mut out = a.mapv(|v| Complex64::new(v, 0.0));
    fft2_inplace(&mut out);
    out
}

/// Move the zero-frequency bin to the grid center: `out[(i + H/2) % H, (j + W/2) % W] = in[i, j]`.
pub fn fftshift2(a: &Array2<Complex64>) -> Array2<Complex64> {
    let (h, w) = a.dim();
    let mut out = Array2::default((h, w));
    for i in 0..h {
        for j in 0..w {
            out[[(i + h / 2) % h, (j + w / 2) % w]] = a[[i, j]];
        }
    }
    out
}

/// Inverse of [`fftshift2`].
pub fn ifftshift2(a: &Array2<Complex64>) -> Array2<Complex64> {
    let (h, w) = a.dim();
    let mut out = Array2::default((h, w));
    for i in 0..h {
        for j in 0..w {
            out[[i, j]] = a[[(i + h / 2) % h, (j + w / 2) % w]];
        }
    }
    out
}
