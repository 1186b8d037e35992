//! SENSE forward model, likelihood gradients, coil utilities.
//!
//! Conventions pinned here and certified by the oracle tests:
//!
//! * DFT: unnormalized forward `F`, `1/(HW)` inverse, so `F^H` is the
//!   unnormalized inverse transform. k-space is stored centered (the zero
//!   frequency sits at `(H/2, W/2)`), so masks are what they look like:
//!   the calibration band covers the low frequencies.
//! * Gradients w.r.t. complex quantities are gradients w.r.t. stacked
//!   (real, imag) coordinates, identified with a complex image; the
//!   finite-difference oracle of `-1/2 ||A(x,s) - y||^2` defines ground truth.
//! * The sampling operator is a binary mask on the Cartesian grid.

mod dst;
mod masks;

pub use dst::{coil_prior_energy, dst2, idst2, prox_coil};
pub use masks::{make_mask, MaskKind};

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{fft2, fft2_adjoint, fftshift2, ifft2, ifftshift2};

/// Complex-valued image plane.
pub type ComplexImage = Array2<Complex64>;

/// Per-coil complex sensitivity profiles. No normalization is enforced;
/// the scaling ambiguity of joint reconstruction is inherent.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilSensitivities {
    coils: Vec<ComplexImage>,
}

impl CoilSensitivities {
    pub fn new(coils: Vec<ComplexImage>) -> Self {
        assert!(!coils.is_empty(), "at least one coil");
        let shape = coils[0].dim();
        assert!(
            coils.iter().all(|c| c.dim() == shape),
            "all coils share one grid"
        );
        Self { coils }
    }

    /// All-ones single-coil sensitivities (the single-coil identity setup).
    pub fn identity(shape: (usize, usize)) -> Self {
        Self::new(vec![Array2::from_elem(shape, Complex64::new(1.0, 0.0))])
    }

    pub fn n_coils(&self) -> usize {
        self.coils.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.coils[0].dim()
    }

    pub fn coils(&self) -> &[ComplexImage] {
        &self.coils
    }

    pub fn coils_mut(&mut self) -> &mut [ComplexImage] {
        &mut self.coils
    }

    /// Pixelwise root-sum-of-squares magnitude.
    pub fn rss(&self) -> Array2<f64> {
        rss(&self.coils)
    }
}

/// Sampling trajectory metadata kept alongside the binary pattern.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskInfo {
    pub kind: MaskKind,
    pub acceleration: f64,
    pub acl_fraction: f64,
    pub rotated: bool,
    pub seed: u64,
}

/// Binary k-space sampling mask.
#[derive(Debug, Clone)]
pub struct SamplingMask {
    pattern: Array2<f64>,
    pub info: MaskInfo,
}

impl SamplingMask {
    pub fn new(pattern: Array2<f64>, info: MaskInfo) -> Result<Self> {
        if !pattern.iter().all(|&v| v == 0.0 || v == 1.0) {
            return Err(Error::invalid("mask entries must be 0 or 1"));
        }
        if !pattern.iter().any(|&v| v == 1.0) {
            return Err(Error::invalid("mask must sample at least one location"));
        }
        Ok(Self { pattern, info })
    }

    pub fn pattern(&self) -> &Array2<f64> {
        &self.pattern
    }

    pub fn shape(&self) -> (usize, usize) {
        self.pattern.dim()
    }

    /// Fraction of sampled k-space locations.
    pub fn sampled_fraction(&self) -> f64 {
        self.pattern.sum() / self.pattern.len() as f64
    }

    fn apply(&self, a: &ComplexImage) -> ComplexImage {
        let mut out = a.clone();
        for (z, &m) in out.iter_mut().zip(self.pattern.iter()) {
            if m == 0.0 {
                *z = Complex64::new(0.0, 0.0);
            }
        }
        out
    }
}

/// Measured multi-coil k-space with zeros at unsampled locations.
#[derive(Debug, Clone)]
pub struct KSpaceData {
    pub coils: Vec<ComplexImage>,
    pub noise_sigma: Option<f64>,
}

impl KSpaceData {
    pub fn n_coils(&self) -> usize {
        self.coils.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.coils[0].dim()
    }
}

/// A parallel-imaging inverse problem: data, mask, grid.
#[derive(Debug, Clone)]
pub struct SenseProblem {
    pub kspace: KSpaceData,
    pub mask: SamplingMask,
}

impl SenseProblem {
    pub fn new(kspace: KSpaceData, mask: SamplingMask) -> Result<Self> {
        if kspace.shape() != mask.shape() {
            return Err(Error::shape(
                format!("{:?}", mask.shape()),
                format!("{:?}", kspace.shape()),
            ));
        }
        Ok(Self { kspace, mask })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.mask.shape()
    }

    pub fn n_coils(&self) -> usize {
        self.kspace.n_coils()
    }

    /// Zero-filled per-coil images `F^{-1} y_i` (centered k-space layout).
    pub fn zero_filled_coils(&self) -> Vec<ComplexImage> {
        self.kspace
            .coils
            .iter()
            .map(|c| ifft2(&ifftshift2(c)))
            .collect()
    }

    /// Root-sum-of-squares of the zero-filled coil images.
    pub fn zero_filled_rss(&self) -> Array2<f64> {
        rss(&self.zero_filled_coils())
    }

    /// Scale the measurements by `1/max(zero-filled RSS)`; returns the scale
    /// so reconstructions can be mapped back to measurement units.
    pub fn normalized(mut self) -> (Self, f64) {
        let scale = self
            .zero_filled_rss()
            .iter()
            .cloned()
            .fold(0.0f64, f64::max);
        if scale > 0.0 {
            for coil in &mut self.kspace.coils {
                coil.mapv_inplace(|z| z / scale);
            }
        }
        (self, scale)
    }
}

fn check_shapes(x: &ComplexImage, s: &CoilSensitivities, mask: &SamplingMask) -> Result<()> {
    if x.dim() != s.shape() || x.dim() != mask.shape() {
        return Err(Error::shape(
            format!("{:?}", x.dim()),
            format!("sensitivities {:?}, mask {:?}", s.shape(), mask.shape()),
        ));
    }
    Ok(())
}

/// SENSE forward operator: per coil `M F(s_i ⊙ x)` with zeros off the mask.
pub fn sense_forward(
    x: &ComplexImage,
    s: &CoilSensitivities,
    mask: &SamplingMask,
) -> Result<KSpaceData> {
    check_shapes(x, s, mask)?;
    let coils = s
        .coils()
        .iter()
        .map(|si| mask.apply(&fftshift2(&fft2(&(si * x)))))
        .collect();
    Ok(KSpaceData {
        coils,
        noise_sigma: None,
    })
}

/// Per-coil masked residual `M^H (y_i - M F(s_i ⊙ x))` back in image space
/// via `F^H` (unnormalized inverse).
fn coil_residual_images(
    x: &ComplexImage,
    s: &CoilSensitivities,
    mask: &SamplingMask,
    y: &KSpaceData,
) -> Result<Vec<ComplexImage>> {
    check_shapes(x, s, mask)?;
    if y.n_coils() != s.n_coils() || y.shape() != x.dim() {
        return Err(Error::shape(
            format!("{} coils of {:?}", s.n_coils(), x.dim()),
            format!("{} coils of {:?}", y.n_coils(), y.shape()),
        ));
    }
    Ok(s.coils()
        .iter()
        .zip(y.coils.iter())
        .map(|(si, yi)| {
            let predicted = mask.apply(&fftshift2(&fft2(&(si * x))));
            let residual = mask.apply(&(yi - &predicted));
            fft2_adjoint(&ifftshift2(&residual))
        })
        .collect())
}

/// Ascent direction of the log-likelihood in `x` for fixed sensitivities:
/// `sum_i conj(s_i) ⊙ F^H M^H (y_i - M F(s_i ⊙ x))`.
pub fn grad_x_loglik(
    x: &ComplexImage,
    s: &CoilSensitivities,
    mask: &SamplingMask,
    y: &KSpaceData,
) -> Result<ComplexImage> {
    let residuals = coil_residual_images(x, s, mask, y)?;
    let mut grad = Array2::from_elem(x.dim(), Complex64::new(0.0, 0.0));
    for (si, res) in s.coils().iter().zip(residuals.iter()) {
        for ((g, sv), rv) in grad.iter_mut().zip(si.iter()).zip(res.iter()) {
            *g += sv.conj() * rv;
        }
    }
    Ok(grad)
}

/// Ascent direction of the log-likelihood in the sensitivities for fixed `x`:
/// per coil `conj(x) ⊙ F^H M^H (y_i - M F(s_i ⊙ x))`.
///
/// The conjugation on `x` is pinned by the finite-difference oracle over
/// stacked (real, imag) coordinates.
pub fn grad_s_loglik(
    x: &ComplexImage,
    s: &CoilSensitivities,
    mask: &SamplingMask,
    y: &KSpaceData,
) -> Result<CoilSensitivities> {
    let residuals = coil_residual_images(x, s, mask, y)?;
    let coils = residuals
        .into_iter()
        .map(|res| {
            let mut g = res;
            for (gv, xv) in g.iter_mut().zip(x.iter()) {
                *gv *= xv.conj();
            }
            g
        })
        .collect();
    Ok(CoilSensitivities::new(coils))
}

/// Data-fidelity value `||A(x, s) - y||` over sampled locations.
pub fn data_fidelity(
    x: &ComplexImage,
    s: &CoilSensitivities,
    mask: &SamplingMask,
    y: &KSpaceData,
) -> Result<f64> {
    let predicted = sense_forward(x, s, mask)?;
    let mut acc = 0.0;
    for (p, m) in predicted.coils.iter().zip(y.coils.iter()) {
        for (a, b) in p.iter().zip(m.iter()) {
            acc += (a - b).norm_sqr();
        }
    }
    Ok(acc.sqrt())
}

/// Pixelwise root-sum-of-squares over a coil stack.
pub fn rss(coil_images: &[ComplexImage]) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros(coil_images[0].dim());
    for coil in coil_images {
        for (o, z) in out.iter_mut().zip(coil.iter()) {
            *o += z.norm_sqr();
        }
    }
    out.mapv_inplace(f64::sqrt);
    out
}

/// Per-coil null-space residual of estimated sensitivities against coil
/// images, plus its RSS reduction across coils:
/// `s_i / |s|^2_RSS * (sum_j conj(s_j) x_j) - x_i`.
///
/// Vanishes when the coil images are exactly `x_i = s_i ⊙ x`.
pub fn nullspace_residual(
    s: &CoilSensitivities,
    coil_images: &[ComplexImage],
) -> (Vec<ComplexImage>, Array2<f64>) {
    assert_eq!(s.n_coils(), coil_images.len());
    let shape = s.shape();
    let mut rss_sq = Array2::<f64>::zeros(shape);
    for coil in s.coils() {
        for (r, z) in rss_sq.iter_mut().zip(coil.iter()) {
            *r += z.norm_sqr();
        }
    }
    // guard tiny denominators relative to the peak sensitivity magnitude
    let floor = 1e-12 * rss_sq.iter().cloned().fold(0.0f64, f64::max);
    let mut combined = Array2::from_elem(shape, Complex64::new(0.0, 0.0));
    for (coil, img) in s.coils().iter().zip(coil_images.iter()) {
        for ((c, sv), xv) in combined.iter_mut().zip(coil.iter()).zip(img.iter()) {
            *c += sv.conj() * xv;
        }
    }
    let residuals: Vec<ComplexImage> = s
        .coils()
        .iter()
        .zip(coil_images.iter())
        .map(|(si, xi)| {
            Array2::from_shape_fn(shape, |idx| {
                si[idx] * combined[idx] / rss_sq[idx].max(floor) - xi[idx]
            })
        })
        .collect();
    let reduction = rss(&residuals);
    (residuals, reduction)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{standard_normal, synthetic_coils};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cimage(h: usize, w: usize, seed: u64) -> ComplexImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((h, w), |_| {
            Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
        })
    }

    fn half_mask(h: usize, w: usize, seed: u64) -> SamplingMask {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pattern = Array2::from_shape_fn((h, w), |_| {
            if rng.gen_bool(0.5) {
                1.0
            } else {
                0.0
            }
        });
        pattern[[0, 0]] = 1.0;
        SamplingMask::new(
            pattern,
            MaskInfo {
                kind: MaskKind::Gaussian2d,
                acceleration: 2.0,
                acl_fraction: 0.0,
                rotated: false,
                seed,
            },
        )
        .unwrap()
    }

    fn full_mask(h: usize, w: usize) -> SamplingMask {
        SamplingMask::new(
            Array2::from_elem((h, w), 1.0),
            MaskInfo {
                kind: MaskKind::Cartesian,
                acceleration: 1.0,
                acl_fraction: 0.0,
                rotated: false,
                seed: 0,
            },
        )
        .unwrap()
    }

    #[test]
    fn single_coil_full_mask_is_plain_dft() {
        let x = random_cimage(8, 8, 1);
        let s = CoilSensitivities::identity((8, 8));
        let y = sense_forward(&x, &s, &full_mask(8, 8)).unwrap();
        let fx = fftshift2(&fft2(&x));
        for (a, b) in y.coils[0].iter().zip(fx.iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn zero_image_gives_zero_data() {
        let x = Array2::from_elem((6, 6), Complex64::new(0.0, 0.0));
        let s = synthetic_coils(3, 6, 2);
        let y = sense_forward(&x, &s, &half_mask(6, 6, 3)).unwrap();
        for coil in &y.coils {
            assert!(coil.iter().all(|z| z.norm() == 0.0));
        }
    }

    #[test]
    fn sense_forward_matches_dense_dft_oracle() {
        // direct DFT-matrix multiplication per coil
        let (h, w) = (8, 8);
        let x = random_cimage(h, w, 4);
        let s = synthetic_coils(2, h, 5);
        let mask = half_mask(h, w, 6);
        let y = sense_forward(&x, &s, &mask).unwrap();
        for (coil, si) in y.coils.iter().zip(s.coils().iter()) {
            for ki in 0..h {
                for kj in 0..w {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for i in 0..h {
                        for j in 0..w {
                            let phase = -2.0
                                * std::f64::consts::PI
                                * ((ki * i) as f64 / h as f64 + (kj * j) as f64 / w as f64);
                            acc += si[[i, j]] * x[[i, j]] * Complex64::from_polar(1.0, phase);
                        }
                    }
                    // bin (ki, kj) lands at the centered position
                    let (ci, cj) = ((ki + h / 2) % h, (kj + w / 2) % w);
                    acc *= mask.pattern()[[ci, cj]];
                    assert!(
                        (acc - coil[[ci, cj]]).norm() <= 1e-12 * acc.norm().max(1.0),
                        "coil mismatch at ({ki},{kj})"
                    );
                }
            }
        }
    }

    #[test]
    fn gradients_vanish_on_consistent_data() {
        let x = random_cimage(8, 8, 7);
        let s = synthetic_coils(3, 8, 8);
        let mask = half_mask(8, 8, 9);
        let y = sense_forward(&x, &s, &mask).unwrap();
        let gx = grad_x_loglik(&x, &s, &mask, &y).unwrap();
        assert!(gx.iter().all(|z| z.norm() < 1e-10));
        let gs = grad_s_loglik(&x, &s, &mask, &y).unwrap();
        for coil in gs.coils() {
            assert!(coil.iter().all(|z| z.norm() < 1e-10));
        }
    }

    #[test]
    fn single_coil_gradient_is_classical_data_consistency() {
        let x = random_cimage(8, 8, 10);
        let s = CoilSensitivities::identity((8, 8));
        let mask = full_mask(8, 8);
        let y = KSpaceData {
            coils: vec![random_cimage(8, 8, 11)],
            noise_sigma: None,
        };
        let grad = grad_x_loglik(&x, &s, &mask, &y).unwrap();
        let want = fft2_adjoint(&ifftshift2(&(&y.coils[0] - &fftshift2(&fft2(&x)))));
        for (a, b) in grad.iter().zip(want.iter()) {
            assert!((a - b).norm() <= 1e-12 * b.norm().max(1.0));
        }
    }

    /// -1/2 ||A(x,s) - y||^2, the objective whose stacked-real gradient the
    /// likelihood gradients must reproduce.
    fn neg_half_residual_sq(
        x: &ComplexImage,
        s: &CoilSensitivities,
        mask: &SamplingMask,
        y: &KSpaceData,
    ) -> f64 {
        let predicted = sense_forward(x, s, mask).unwrap();
        let mut acc = 0.0;
        for (p, m) in predicted.coils.iter().zip(y.coils.iter()) {
            for (a, b) in p.iter().zip(m.iter()) {
                acc += (a - b).norm_sqr();
            }
        }
        -0.5 * acc
    }

    #[test]
    fn grad_x_matches_finite_differences() {
        let (h, w) = (8, 8);
        let x = random_cimage(h, w, 12);
        let s = synthetic_coils(3, h, 13);
        let mask = half_mask(h, w, 14);
        let y = KSpaceData {
            coils: (0..3).map(|k| random_cimage(h, w, 20 + k)).collect(),
            noise_sigma: None,
        };
        let grad = grad_x_loglik(&x, &s, &mask, &y).unwrap();
        let h_step = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..20 {
            let (i, j) = (rng.gen_range(0..h), rng.gen_range(0..w));
            for part in 0..2 {
                let delta = if part == 0 {
                    Complex64::new(h_step, 0.0)
                } else {
                    Complex64::new(0.0, h_step)
                };
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[[i, j]] += delta;
                xm[[i, j]] -= delta;
                let fd = (neg_half_residual_sq(&xp, &s, &mask, &y)
                    - neg_half_residual_sq(&xm, &s, &mask, &y))
                    / (2.0 * h_step);
                let analytic = if part == 0 {
                    grad[[i, j]].re
                } else {
                    grad[[i, j]].im
                };
                assert!(
                    (analytic - fd).abs() <= 1e-6 * fd.abs().max(1.0),
                    "({i},{j}) part {part}: {analytic} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn grad_s_matches_finite_differences() {
        let (h, w) = (8, 8);
        let x = random_cimage(h, w, 30);
        let s = synthetic_coils(3, h, 31);
        let mask = half_mask(h, w, 32);
        let y = KSpaceData {
            coils: (0..3).map(|k| random_cimage(h, w, 40 + k)).collect(),
            noise_sigma: None,
        };
        let grad = grad_s_loglik(&x, &s, &mask, &y).unwrap();
        let h_step = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for _ in 0..20 {
            let coil = rng.gen_range(0..3);
            let (i, j) = (rng.gen_range(0..h), rng.gen_range(0..w));
            for part in 0..2 {
                let delta = if part == 0 {
                    Complex64::new(h_step, 0.0)
                } else {
                    Complex64::new(0.0, h_step)
                };
                let mut sp = s.clone();
                let mut sm = s.clone();
                sp.coils_mut()[coil][[i, j]] += delta;
                sm.coils_mut()[coil][[i, j]] -= delta;
                let fd = (neg_half_residual_sq(&x, &sp, &mask, &y)
                    - neg_half_residual_sq(&x, &sm, &mask, &y))
                    / (2.0 * h_step);
                let analytic = if part == 0 {
                    grad.coils()[coil][[i, j]].re
                } else {
                    grad.coils()[coil][[i, j]].im
                };
                assert!(
                    (analytic - fd).abs() <= 1e-6 * fd.abs().max(1.0),
                    "coil {coil} ({i},{j}) part {part}: {analytic} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn grad_s_trivial_cases() {
        let x = Array2::from_elem((6, 6), Complex64::new(0.0, 0.0));
        let s = synthetic_coils(2, 6, 50);
        let mask = half_mask(6, 6, 51);
        let y = sense_forward(&random_cimage(6, 6, 52), &s, &mask).unwrap();
        let grad = grad_s_loglik(&x, &s, &mask, &y).unwrap();
        for coil in grad.coils() {
            assert!(coil.iter().all(|z| z.norm() == 0.0));
        }
    }

    #[test]
    fn sense_operator_adjoint_identity() {
        // <A x, u> = <x, A^H u> for fixed s, complex inner product
        let (h, w) = (8, 6);
        let x = random_cimage(h, w, 60);
        let s = synthetic_coils(3, h, 61);
        // non-square sensitivities: re-generate on the right grid
        let s = CoilSensitivities::new(
            s.coils()
                .iter()
                .map(|c| {
                    Array2::from_shape_fn((h, w), |(i, j)| c[[i, j.min(h - 1)]])
                })
                .collect(),
        );
        let mask = half_mask(h, w, 62);
        let u: Vec<ComplexImage> = (0..3).map(|k| random_cimage(h, w, 70 + k)).collect();
        let ax = sense_forward(&x, &s, &mask).unwrap();
        // A^H u = sum_i conj(s_i) F^H M^H u_i
        let mut ahu = Array2::from_elem((h, w), Complex64::new(0.0, 0.0));
        for (si, ui) in s.coils().iter().zip(u.iter()) {
            let back = fft2_adjoint(&ifftshift2(&mask.apply(ui)));
            for ((a, sv), bv) in ahu.iter_mut().zip(si.iter()).zip(back.iter()) {
                *a += sv.conj() * bv;
            }
        }
        let lhs: Complex64 = ax
            .coils
            .iter()
            .zip(u.iter())
            .flat_map(|(a, b)| a.iter().zip(b.iter()))
            .map(|(a, b)| a.conj() * b)
            .sum();
        let rhs: Complex64 = x.iter().zip(ahu.iter()).map(|(a, b)| a.conj() * b).sum();
        assert!((lhs - rhs).norm() <= 1e-12 * lhs.norm().max(1.0));
    }

    #[test]
    fn rss_examples() {
        let z = random_cimage(5, 5, 80);
        let single = rss(&[z.clone()]);
        for (a, b) in single.iter().zip(z.iter()) {
            assert!((a - b.norm()).abs() < 1e-14);
        }
        let double = rss(&[z.clone(), z.clone()]);
        for (a, b) in double.iter().zip(z.iter()) {
            assert!((a - 2.0f64.sqrt() * b.norm()).abs() < 1e-13);
        }
        // random stack vs naive loop
        let stack: Vec<ComplexImage> = (0..4).map(|k| random_cimage(5, 5, 90 + k)).collect();
        let got = rss(&stack);
        for i in 0..5 {
            for j in 0..5 {
                let want: f64 = stack
                    .iter()
                    .map(|c| c[[i, j]].norm_sqr())
                    .sum::<f64>()
                    .sqrt();
                assert!((got[[i, j]] - want).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn nullspace_residual_examples() {
        let (h, w) = (8, 8);
        // exact model: x_i = s_i * x gives a vanishing residual
        let s = synthetic_coils(4, h, 100);
        let x = random_cimage(h, w, 101);
        let coil_images: Vec<ComplexImage> = s.coils().iter().map(|si| si * &x).collect();
        let (residuals, reduction) = nullspace_residual(&s, &coil_images);
        for r in &residuals {
            assert!(r.iter().all(|z| z.norm() < 1e-10));
        }
        assert!(reduction.iter().all(|&v| v < 1e-10));

        // single coil cancels algebraically
        let s1 = CoilSensitivities::new(vec![random_cimage(h, w, 102)]);
        let x1 = vec![random_cimage(h, w, 103)];
        let (residuals, _) = nullspace_residual(&s1, &x1);
        let scale = x1[0].iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(residuals[0].iter().all(|z| z.norm() < 1e-12 * scale));

        // random case vs naive elementwise oracle
        let s = synthetic_coils(3, h, 104);
        let imgs: Vec<ComplexImage> = (0..3).map(|k| random_cimage(h, w, 110 + k)).collect();
        let (residuals, _) = nullspace_residual(&s, &imgs);
        for i in 0..h {
            for j in 0..w {
                let rss_sq: f64 = s.coils().iter().map(|c| c[[i, j]].norm_sqr()).sum();
                let combined: Complex64 = s
                    .coils()
                    .iter()
                    .zip(imgs.iter())
                    .map(|(sc, xc)| sc[[i, j]].conj() * xc[[i, j]])
                    .sum();
                for (coil, (res, img)) in residuals.iter().zip(imgs.iter()).enumerate() {
                    let want = s.coils()[coil][[i, j]] * combined / rss_sq - img[[i, j]];
                    let got = res[[i, j]];
                    assert!((got - want).norm() <= 1e-12 * want.norm().max(1.0));
                }
            }
        }
    }

    #[test]
    fn normalization_scales_measurements() {
        let (h, w) = (8, 8);
        let s = synthetic_coils(2, h, 120);
        let mut x = random_cimage(h, w, 121);
        x.mapv_inplace(|z| z * 37.0);
        let mask = half_mask(h, w, 122);
        let y = sense_forward(&x, &s, &mask).unwrap();
        let problem = SenseProblem::new(y, mask).unwrap();
        let (normalized, scale) = problem.normalized();
        assert!(scale > 0.0);
        let peak = normalized
            .zero_filled_rss()
            .iter()
            .cloned()
            .fold(0.0f64, f64::max);
        assert!((peak - 1.0).abs() < 1e-12);
    }

    #[test]
    fn data_fidelity_zero_on_consistent_data() {
        let x = random_cimage(6, 6, 130);
        let s = synthetic_coils(2, 6, 131);
        let mask = half_mask(6, 6, 132);
        let y = sense_forward(&x, &s, &mask).unwrap();
        assert!(data_fidelity(&x, &s, &mask, &y).unwrap() < 1e-10);
        let noise = Array2::from_shape_fn((6, 6), |_| {
            let mut rng = ChaCha8Rng::seed_from_u64(133);
            Complex64::new(standard_normal(&mut rng), 0.0)
        });
        let x2 = &x + &noise;
        assert!(data_fidelity(&x2, &s, &mask, &y).unwrap() > 0.0);
    }
}
