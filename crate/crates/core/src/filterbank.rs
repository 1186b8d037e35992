//! Bank of small convolution kernels with circular boundary handling.
//!
//! Kernels are `r x r` with odd `r` and centered taps. The forward operator
//! is true convolution, the adjoint is correlation; both run in the frequency
//! domain through spectra cached at a fixed image shape, with a direct
//! spatial path for images smaller than the kernel.

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::fft::{fft2_real, ifft2_inplace};

#[derive(Debug, Clone)]
pub struct FilterBank {
    kernels: Vec<Array2<f64>>,
    image_shape: (usize, usize),
    spectra: Vec<Array2<Complex64>>,
}

/// Which statistic of the magnitude spectrum feeds the time conditioning.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectralMode {
    Max,
    Mean,
}

impl FilterBank {
    pub fn new(kernels: Vec<Array2<f64>>, image_shape: (usize, usize)) -> Result<Self> {
        if kernels.is_empty() {
            return Err(Error::invalid("filter bank must hold at least one kernel"));
        }
        let r = kernels[0].nrows();
        for k in &kernels {
            if k.nrows() != r || k.ncols() != r {
                return Err(Error::shape(format!("{r}x{r} kernels"), format!("{:?}", k.dim())));
            }
        }
        if r % 2 == 0 {
            return Err(Error::invalid("kernel size must be odd"));
        }
        let mut bank = Self {
            kernels,
            image_shape,
            spectra: Vec::new(),
        };
        bank.recompute_spectra();
        Ok(bank)
    }

    /// Kernels drawn i.i.d. normal with variance `1/(o r^2)`, zero-mean projected.
    pub fn random_init(
        n_filters: usize,
        kernel_size: usize,
        image_shape: (usize, usize),
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let std = (1.0 / (n_filters * kernel_size * kernel_size) as f64).sqrt();
        let kernels = (0..n_filters)
            .map(|_| {
                Array2::from_shape_fn((kernel_size, kernel_size), |_| {
                    std * crate::synth::standard_normal(rng)
                })
            })
            .collect();
        let mut bank = Self::new(kernels, image_shape)?;
        bank.project_zero_mean();
        Ok(bank)
    }

    /// Deterministic bank of 8 classical zero-mean difference kernels.
    pub fn fixed_difference_bank(image_shape: (usize, usize)) -> Self {
        let k = |rows: [[f64; 3]; 3]| {
            Array2::from_shape_vec((3, 3), rows.concat()).expect("3x3 kernel")
        };
        let kernels = vec![
            // first differences
            k([[0., 0., 0.], [0., -1., 1.], [0., 0., 0.]]),
            k([[0., 0., 0.], [0., -1., 0.], [0., 1., 0.]]),
            // diagonals
            k([[0., 0., 0.], [0., -1., 0.], [0., 0., 1.]]),
            k([[0., 0., 0.], [0., -1., 0.], [1., 0., 0.]]),
            // Laplacian
            k([[0., 1., 0.], [1., -4., 1.], [0., 1., 0.]]),
            // second derivatives
            k([[0., 0., 0.], [1., -2., 1.], [0., 0., 0.]]),
            k([[0., 1., 0.], [0., -2., 0.], [0., 1., 0.]]),
            // mixed derivative
            k([[0., 0., 0.], [0., 1., -1.], [0., -1., 1.]]),
        ];
        Self::new(kernels, image_shape).expect("valid fixed bank")
    }

    pub fn n_filters(&self) -> usize {
        self.kernels.len()
    }

    pub fn kernel_size(&self) -> usize {
        self.kernels[0].nrows()
    }

    pub fn image_shape(&self) -> (usize, usize) {
        self.image_shape
    }

    pub fn kernels(&self) -> &[Array2<f64>] {
        &self.kernels
    }

    /// Number of stored kernel coefficients.
    pub fn param_count(&self) -> usize {
        self.n_filters() * self.kernel_size() * self.kernel_size()
    }

    /// Mutable kernel access for optimizers; call [`Self::refresh_spectra`]
    /// afterwards.
    pub fn kernels_mut(&mut self) -> &mut Vec<Array2<f64>> {
        &mut self.kernels
    }

    /// Re-cache spectra after a kernel mutation.
    pub fn refresh_spectra(&mut self) {
        self.recompute_spectra();
    }

    /// Change the working image shape, re-caching the spectra.
    pub fn set_image_shape(&mut self, shape: (usize, usize)) {
        if shape != self.image_shape {
            self.image_shape = shape;
            self.recompute_spectra();
        }
    }

    fn recompute_spectra(&mut self) {
        let (h, w) = self.image_shape;
        if h < self.kernel_size() || w < self.kernel_size() {
            // tiny grids use the direct path; no spectra needed
            self.spectra = Vec::new();
            return;
        }
        self.spectra = self
            .kernels
            .iter()
            .map(|k| {
                let mut padded = Array2::<f64>::zeros((h, w));
                let c = (k.nrows() / 2) as isize;
                for a in 0..k.nrows() {
                    for b in 0..k.ncols() {
                        let dy = a as isize - c;
                        let dx = b as isize - c;
                        let i = dy.rem_euclid(h as isize) as usize;
                        let j = dx.rem_euclid(w as isize) as usize;
                        padded[[i, j]] += k[[a, b]];
                    }
                }
                fft2_real(&padded)
            })
            .collect();
    }

    fn check_image_shape(&self, got: (usize, usize)) -> Result<()> {
        if got != self.image_shape {
            return Err(Error::shape(
                format!("image {:?}", self.image_shape),
                format!("{got:?}"),
            ));
        }
        Ok(())
    }

    fn use_direct_path(&self) -> bool {
        let (h, w) = self.image_shape;
        let r = self.kernel_size();
        h < r || w < r
    }

    /// All filter responses `K_k x`, shape `(o, H, W)`.
    pub fn conv_forward(&self, x: &Array2<f64>) -> Result<Array3<f64>> {
        self.check_image_shape(x.dim())?;
        let (h, w) = self.image_shape;
        let mut out = Array3::zeros((self.n_filters(), h, w));
        if self.use_direct_path() {
            for (k, kernel) in self.kernels.iter().enumerate() {
                let resp = conv2_circular_direct(x, kernel, false);
                out.index_axis_mut(ndarray::Axis(0), k).assign(&resp);
            }
            return Ok(out);
        }
        let x_hat = fft2_real(x);
        for (k, spectrum) in self.spectra.iter().enumerate() {
            let mut prod = &x_hat * spectrum;
            ifft2_inplace(&mut prod);
            let mut channel = out.index_axis_mut(ndarray::Axis(0), k);
            for (dst, src) in channel.iter_mut().zip(prod.iter()) {
                *dst = src.re;
            }
        }
        Ok(out)
    }

    /// Adjoint of [`conv_forward`]: correlation with the kernels, summed over filters.
    pub fn conv_adjoint(&self, u: &Array3<f64>) -> Result<Array2<f64>> {
        let (h, w) = self.image_shape;
        if u.dim() != (self.n_filters(), h, w) {
            return Err(Error::shape(
                format!("responses {:?}", (self.n_filters(), h, w)),
                format!("{:?}", u.dim()),
            ));
        }
        if self.use_direct_path() {
            let mut out = Array2::zeros((h, w));
            for (k, kernel) in self.kernels.iter().enumerate() {
                let channel = u.index_axis(ndarray::Axis(0), k).to_owned();
                out += &conv2_circular_direct(&channel, kernel, true);
            }
            return Ok(out);
        }
        let mut acc = Array2::<Complex64>::zeros((h, w));
        for (k, spectrum) in self.spectra.iter().enumerate() {
            let channel = u.index_axis(ndarray::Axis(0), k);
            let mut u_hat = Array2::from_shape_fn((h, w), |idx| Complex64::new(channel[idx], 0.0));
            crate::fft::fft2_inplace(&mut u_hat);
            for ((a, s), v) in acc.iter_mut().zip(spectrum.iter()).zip(u_hat.iter()) {
                *a += s.conj() * v;
            }
        }
        ifft2_inplace(&mut acc);
        Ok(acc.mapv(|z| z.re))
    }

    /// Subtract each kernel's mean; idempotent. Re-caches the spectra.
    pub fn project_zero_mean(&mut self) {
        for k in &mut self.kernels {
            // a 1x1 kernel is a plain scalar gain; zeroing its mean would
            // erase it, so the radiometric-shift projection skips it
            if k.len() == 1 {
                continue;
            }
            let mean = k.sum() / k.len() as f64;
            k.mapv_inplace(|v| v - mean);
        }
        self.recompute_spectra();
    }

    /// `nu_k^2`: the max (or mean) of the filter magnitude spectrum at the
    /// cached image shape.
    pub fn spectral_nu(&self, mode: SpectralMode) -> Vec<f64> {
        let (h, w) = self.image_shape;
        if self.spectra.is_empty() {
            // tiny grid: compute spectra on the fly
            let mut clone = self.clone();
            clone.image_shape = (h.max(self.kernel_size()), w.max(self.kernel_size()));
            clone.recompute_spectra();
            return clone.spectral_nu(mode);
        }
        self.spectra
            .iter()
            .map(|s| match mode {
                SpectralMode::Max => s.iter().map(|z| z.norm()).fold(0.0, f64::max),
                SpectralMode::Mean => s.iter().map(|z| z.norm()).sum::<f64>() / (h * w) as f64,
            })
            .collect()
    }
}

/// Direct circular convolution (`adjoint = false`) or correlation
/// (`adjoint = true`) with a centered kernel, O(H W r^2).
fn conv2_circular_direct(x: &Array2<f64>, kernel: &Array2<f64>, adjoint: bool) -> Array2<f64> {
    let (h, w) = x.dim();
    let r = kernel.nrows();
    let c = (r / 2) as isize;
    let mut out = Array2::zeros((h, w));
    for i in 0..h as isize {
        for j in 0..w as isize {
            let mut acc = 0.0;
            for a in 0..r as isize {
                for b in 0..r as isize {
                    let (dy, dx) = (a - c, b - c);
                    let (si, sj) = if adjoint {
                        (i + dy, j + dx)
                    } else {
                        (i - dy, j - dx)
                    };
                    let si = si.rem_euclid(h as isize) as usize;
                    let sj = sj.rem_euclid(w as isize) as usize;
                    acc += kernel[[a as usize, b as usize]] * x[[si, sj]];
                }
            }
            out[[i as usize, j as usize]] = acc;
        }
    }
    out
}
