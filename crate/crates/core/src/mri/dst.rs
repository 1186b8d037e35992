//! Discrete sine transform, Dirichlet smoothness energy and its prox.
//!
//! The smoothness energy on each real channel is `1/2 u^T L u` where `L` is
//! the standard 5-point Dirichlet Laplacian: the sum of squared forward
//! differences including the crossings at both grid boundaries, with values
//! outside the grid pinned to zero. The orthonormal DST-I diagonalizes `L`
//! with eigenvalues `tau_{ij} = 4 - 2 cos(i pi/(H+1)) - 2 cos(j pi/(W+1))`,
//! which yields the closed-form proximal map `(I + mu L)^{-1}`.

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::mri::CoilSensitivities;

/// Orthonormal DST-I along one axis of length `n`, via an FFT of length
/// `2(n+1)` on the odd extension.
fn dst1_line(x: &mut [f64], scratch: &mut Vec<Complex64>) {
    let n = x.len();
    let m = 2 * (n + 1);
    scratch.clear();
    scratch.resize(m, Complex64::new(0.0, 0.0));
    for (j, &v) in x.iter().enumerate() {
        scratch[j + 1] = Complex64::new(v, 0.0);
        scratch[m - 1 - j] = Complex64::new(-v, 0.0);
    }
    let fft = super::super::fft::plan_forward(m);
    fft.process(scratch);
    let scale = (2.0 / (n + 1) as f64).sqrt();
    for (k, v) in x.iter_mut().enumerate() {
        *v = -0.5 * scratch[k + 1].im * scale;
    }
}

/// Orthonormal two-dimensional DST-I. Involutive: `dst2(dst2(x)) = x`.
pub fn dst2(channel: &Array2<f64>) -> Array2<f64> {
    let (h, w) = channel.dim();
    let mut out = channel.clone();
    let mut scratch = Vec::new();
    // rows
    for mut row in out.rows_mut() {
        let slice = row.as_slice_mut().expect("standard layout");
        dst1_line(slice, &mut scratch);
    }
    // columns
    let mut column = vec![0.0; h];
    for j in 0..w {
        for i in 0..h {
            column[i] = out[[i, j]];
        }
        dst1_line(&mut column, &mut scratch);
        for i in 0..h {
            out[[i, j]] = column[i];
        }
    }
    out
}

/// Inverse of [`dst2`]; the orthonormal DST-I is its own inverse.
pub fn idst2(channel: &Array2<f64>) -> Array2<f64> {
    dst2(channel)
}

/// Eigenvalues of the Dirichlet Laplacian on the DST-I basis.
fn laplacian_eigenvalues(h: usize, w: usize) -> Array2<f64> {
    Array2::from_shape_fn((h, w), |(i, j)| {
        4.0 - 2.0 * ((i + 1) as f64 * std::f64::consts::PI / (h + 1) as f64).cos()
            - 2.0 * ((j + 1) as f64 * std::f64::consts::PI / (w + 1) as f64).cos()
    })
}

/// Dirichlet smoothness energy of one real channel: `1/2 u^T L u`, i.e. half
/// the sum of squared forward differences including boundary crossings.
fn channel_energy(u: &Array2<f64>) -> f64 {
    let (h, w) = u.dim();
    let mut acc = 0.0;
    for i in 0..h {
        for j in 0..w {
            let v = u[[i, j]];
            let right = if j + 1 < w { u[[i, j + 1]] } else { 0.0 };
            let down = if i + 1 < h { u[[i + 1, j]] } else { 0.0 };
            acc += (right - v).powi(2) + (down - v).powi(2);
            // crossings into the grid from the zero boundary
            if j == 0 {
                acc += v * v;
            }
            if i == 0 {
                acc += v * v;
            }
        }
    }
    0.5 * acc
}

/// Coil smoothness prior `gamma(s) = 1/2 sum_i (||D Re s_i||^2 + ||D Im s_i||^2)`.
pub fn coil_prior_energy(s: &CoilSensitivities) -> f64 {
    s.coils()
        .iter()
        .map(|coil| {
            channel_energy(&coil.mapv(|z| z.re)) + channel_energy(&coil.mapv(|z| z.im))
        })
        .sum()
}

/// Proximal map of `mu * gamma`: channelwise `(I + mu L)^{-1}` via the DST.
/// `mu = 0` is the identity; `mu -> inf` sends every channel to zero.
pub fn prox_coil(s: &CoilSensitivities, mu: f64) -> Result<CoilSensitivities> {
    if mu < 0.0 {
        return Err(Error::invalid(format!("prox weight must be >= 0, got {mu}")));
    }
    let (h, w) = s.shape();
    let tau = laplacian_eigenvalues(h, w);
    let solve_channel = |u: &Array2<f64>| -> Array2<f64> {
        let mut hat = dst2(u);
        for (coef, &t) in hat.iter_mut().zip(tau.iter()) {
            *coef /= 1.0 + mu * t;
        }
        idst2(&hat)
    };
    let coils = s
        .coils()
        .iter()
        .map(|coil| {
            let re = solve_channel(&coil.mapv(|z| z.re));
            let im = solve_channel(&coil.mapv(|z| z.im));
            Array2::from_shape_fn((h, w), |idx| Complex64::new(re[idx], im[idx]))
        })
        .collect();
    Ok(CoilSensitivities::new(coils))
}
